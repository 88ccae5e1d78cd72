//! JSON-lines event stream.

use std::convert::Infallible;

use bytes::Bytes;
use chrono::Utc;
use feedstack_core::{ErrorCode, EventFrame, FrameBody};
use futures::stream::{self, Stream, StreamExt};
use tokio::sync::{broadcast, watch};

use crate::hub::Subscription;

/// Builds the body of an events response: the backlog, then (when
/// `follow` is set) live frames until the session is dropped, the server
/// shuts down or the subscriber falls too far behind. In the last case a
/// final `error` frame with seq 0 tells the client where to reconnect.
pub fn frame_stream(
    session_id: String,
    from_seq: u64,
    subscription: Subscription,
    follow: bool,
    shutdown: watch::Receiver<bool>,
) -> impl Stream<Item = Result<Bytes, Infallible>> + Send {
    let Subscription { backlog, live, .. } = subscription;
    let cursor = backlog.last().map_or(from_seq, |f| f.seq.max(from_seq));
    let state = Tail {
        session_id,
        cursor,
        live: follow.then_some(live),
        shutdown,
    };
    let backlog = stream::iter(backlog.into_iter().map(|f| Ok(line(&f))));
    backlog.chain(stream::unfold(state, |mut tail| async move {
        let frame = tail.next().await?;
        Some((Ok(line(&frame)), tail))
    }))
}

struct Tail {
    session_id: String,
    /// Highest seq delivered so far.
    cursor: u64,
    live: Option<broadcast::Receiver<EventFrame>>,
    shutdown: watch::Receiver<bool>,
}

impl Tail {
    async fn next(&mut self) -> Option<EventFrame> {
        loop {
            let live = self.live.as_mut()?;
            if *self.shutdown.borrow() {
                return None;
            }
            let received = tokio::select! {
                received = live.recv() => received,
                _ = self.shutdown.changed() => return None,
            };
            match received {
                Ok(frame) if frame.seq <= self.cursor => continue,
                Ok(frame) => {
                    self.cursor = frame.seq;
                    return Some(frame);
                }
                Err(broadcast::error::RecvError::Lagged(missed)) => {
                    self.live = None;
                    tracing::warn!(session = %self.session_id, missed, "disconnecting slow subscriber");
                    return Some(EventFrame {
                        seq: 0,
                        session_id: self.session_id.clone(),
                        body: FrameBody::Error {
                            code: ErrorCode::Internal,
                            detail: format!(
                                "subscriber fell {missed} frames behind; reconnect with from_seq={}",
                                self.cursor
                            ),
                        },
                        at: Utc::now(),
                    });
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }
}

fn line(frame: &EventFrame) -> Bytes {
    let mut text = frame.to_json_line();
    text.push('\n');
    Bytes::from(text)
}
