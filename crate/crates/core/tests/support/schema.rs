//! Validation against the JSON-Schema files shipped under `schemas/`.

#![allow(dead_code)]

use std::path::PathBuf;

use serde_json::Value;

const BASE: &str = "https://feedstack.dev/schemas/";

pub fn schema_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

fn load(name: &str) -> Value {
    let path = schema_dir().join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

/// Errors from validating `instance` against `schemas/<name>`, where
/// `name` may carry a fragment such as `api.schema.json#/$defs/snapshot`.
/// Empty when valid.
pub fn validate(name: &str, instance: &Value) -> Vec<String> {
    let mut options = jsonschema::options();
    for entry in std::fs::read_dir(schema_dir()).unwrap() {
        let file = entry.unwrap().file_name().into_string().unwrap();
        if file.ends_with(".json") {
            let resource = jsonschema::Resource::from_contents(load(&file)).unwrap();
            options = options.with_resource(format!("{BASE}{file}"), resource);
        }
    }
    let root = serde_json::json!({ "$ref": format!("{BASE}{name}") });
    let validator = options.build(&root).expect("schema compiles");
    validator.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path)).collect()
}
