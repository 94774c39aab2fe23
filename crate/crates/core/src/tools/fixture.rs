//! Record/replay fixture store for externally backed tools.
//!
//! Records are content-addressed by (tool, canonical arguments): one JSON
//! file per key, with a self-describing header so a store can be audited
//! without the code that wrote it. Replay never touches the network; in
//! strict mode an unknown key is a [`ToolError::FixtureMiss`], in lenient
//! mode it degrades to an empty-result sentinel and a log line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ToolError, ToolResult, TOOL_URL_VISIT, TOOL_WEB_SEARCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureMode {
    /// Bypass the store entirely (live execution, nothing persisted).
    Off,
    /// Execute live and persist every result.
    Record,
    /// Serve stored results only; unknown keys are errors.
    Replay,
    /// Serve stored results; unknown keys degrade to empty sentinels.
    ReplayLenient,
}

impl std::str::FromStr for FixtureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(FixtureMode::Off),
            "record" => Ok(FixtureMode::Record),
            "replay" => Ok(FixtureMode::Replay),
            "replay-lenient" => Ok(FixtureMode::ReplayLenient),
            other => Err(format!("unknown fixture mode '{other}'")),
        }
    }
}

/// On-disk record: header (tool + canonical args) plus the stored result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub tool: String,
    pub args: serde_json::Value,
    pub result: ToolResult,
}

pub struct FixtureStore {
    dir: PathBuf,
    mode: FixtureMode,
    // Record mode serializes writes; readers need no coordination.
    write_lock: tokio::sync::Mutex<()>,
}

/// Canonical argument serialization: compact JSON with lexicographic keys.
pub fn canonical_args(args: &serde_json::Map<String, serde_json::Value>) -> String {
    serde_json::Value::Object(args.clone()).to_string()
}

/// Content address for one invocation.
pub fn fixture_key(tool: &str, canonical: &str) -> String {
    let mut h = Sha256::new();
    h.update(tool.as_bytes());
    h.update(b"\n");
    h.update(canonical.as_bytes());
    hex::encode(h.finalize())
}

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>, mode: FixtureMode) -> std::io::Result<Self> {
        let dir = dir.into();
        if mode == FixtureMode::Record {
            std::fs::create_dir_all(&dir)?;
        }
        Ok(FixtureStore { dir, mode, write_lock: tokio::sync::Mutex::new(()) })
    }

    pub fn mode(&self) -> FixtureMode {
        self.mode
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, tool: &str, key: &str) -> PathBuf {
        self.dir.join(format!("{tool}-{}.json", &key[..16]))
    }

    /// Serve a stored result, or the mode's miss behavior.
    pub async fn replay(
        &self,
        tool: &str,
        args: &serde_json::Map<String, serde_json::Value>,
    ) -> Result<ToolResult, ToolError> {
        let canonical = canonical_args(args);
        let key = fixture_key(tool, &canonical);
        let path = self.path_for(tool, &key);
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                let record: FixtureRecord = serde_json::from_str(&text)
                    .map_err(|e| ToolError::StoreCorrupt(format!("{}: {e}", path.display())))?;
                if record.tool != tool {
                    return Err(ToolError::StoreCorrupt(format!(
                        "{}: header names tool {} but key belongs to {tool}",
                        path.display(),
                        record.tool
                    )));
                }
                Ok(record.result)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => match self.mode {
                FixtureMode::ReplayLenient => {
                    log::warn!("fixture miss for {tool} (key {key}); serving empty sentinel");
                    Ok(empty_sentinel(tool, args))
                }
                _ => Err(ToolError::FixtureMiss { tool: tool.to_string(), key }),
            },
            Err(e) => Err(ToolError::StoreCorrupt(format!("{}: {e}", path.display()))),
        }
    }

    /// Persist a live result under its canonical key.
    pub async fn record(
        &self,
        tool: &str,
        args: &serde_json::Map<String, serde_json::Value>,
        result: &ToolResult,
    ) -> Result<(), ToolError> {
        let canonical = canonical_args(args);
        let key = fixture_key(tool, &canonical);
        let record = FixtureRecord {
            tool: tool.to_string(),
            args: serde_json::Value::Object(args.clone()),
            result: result.clone(),
        };
        let text = serde_json::to_string_pretty(&record)
            .map_err(|e| ToolError::StoreCorrupt(e.to_string()))?;
        let _guard = self.write_lock.lock().await;
        std::fs::write(self.path_for(tool, &key), text)
            .map_err(|e| ToolError::StoreCorrupt(e.to_string()))?;
        Ok(())
    }

    /// Audit every record: parsable, self-consistent header, and filed under
    /// the key its contents hash to. Returns the number of verified records.
    pub fn verify_all(&self) -> Result<usize, ToolError> {
        let entries = std::fs::read_dir(&self.dir)
            .map_err(|e| ToolError::StoreCorrupt(format!("{}: {e}", self.dir.display())))?;
        let mut count = 0;
        for entry in entries {
            let path = entry.map_err(|e| ToolError::StoreCorrupt(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = std::fs::read_to_string(&path)
                .map_err(|e| ToolError::StoreCorrupt(format!("{}: {e}", path.display())))?;
            let record: FixtureRecord = serde_json::from_str(&text)
                .map_err(|e| ToolError::StoreCorrupt(format!("{}: {e}", path.display())))?;
            let args = record.args.as_object().ok_or_else(|| {
                ToolError::StoreCorrupt(format!("{}: args is not an object", path.display()))
            })?;
            let key = fixture_key(&record.tool, &canonical_args(args));
            let expected = self.path_for(&record.tool, &key);
            if expected.file_name() != path.file_name() {
                return Err(ToolError::StoreCorrupt(format!(
                    "{}: contents hash to {}",
                    path.display(),
                    expected.display()
                )));
            }
            count += 1;
        }
        Ok(count)
    }
}

/// Tool-appropriate empty result served on a lenient replay miss.
pub fn empty_sentinel(
    tool: &str,
    args: &serde_json::Map<String, serde_json::Value>,
) -> ToolResult {
    match tool {
        TOOL_WEB_SEARCH => ToolResult::structured(
            serde_json::json!({
                "search_query": args.get("query").cloned().unwrap_or_default(),
                "search_result": [],
            }),
            0,
        ),
        TOOL_URL_VISIT => ToolResult::structured(
            serde_json::json!({
                "visited_url": args.get("url").cloned().unwrap_or_default(),
                "mode": "full",
                "result": "",
            }),
            0,
        ),
        _ => ToolResult::text("", 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: serde_json::Value) -> serde_json::Map<String, serde_json::Value> {
        v.as_object().unwrap().clone()
    }

    #[tokio::test]
    async fn record_then_replay_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::open(dir.path(), FixtureMode::Record).unwrap();
        let a = args(serde_json::json!({"query": "x"}));
        let result = ToolResult::structured(serde_json::json!({"search_result": [1, 2]}), 17);
        store.record(TOOL_WEB_SEARCH, &a, &result).await.unwrap();

        let replay = FixtureStore::open(dir.path(), FixtureMode::Replay).unwrap();
        let got = replay.replay(TOOL_WEB_SEARCH, &a).await.unwrap();
        assert_eq!(serde_json::to_vec(&got).unwrap(), serde_json::to_vec(&result).unwrap());
    }

    #[tokio::test]
    async fn canonical_key_order_insensitive() {
        let a1 = args(serde_json::json!({"url": "https://e.com", "goal": "g"}));
        let a2 = args(serde_json::json!({"goal": "g", "url": "https://e.com"}));
        assert_eq!(canonical_args(&a1), canonical_args(&a2));
        assert_eq!(
            fixture_key(TOOL_URL_VISIT, &canonical_args(&a1)),
            fixture_key(TOOL_URL_VISIT, &canonical_args(&a2))
        );
    }

    #[tokio::test]
    async fn strict_miss_errors_lenient_degrades() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path()).unwrap();
        let strict = FixtureStore::open(dir.path(), FixtureMode::Replay).unwrap();
        let a = args(serde_json::json!({"query": "unseen"}));
        assert!(matches!(
            strict.replay(TOOL_WEB_SEARCH, &a).await,
            Err(ToolError::FixtureMiss { .. })
        ));

        let lenient = FixtureStore::open(dir.path(), FixtureMode::ReplayLenient).unwrap();
        let got = lenient.replay(TOOL_WEB_SEARCH, &a).await.unwrap();
        assert_eq!(got.observation_text(), r#"{"search_query":"unseen","search_result":[]}"#);
    }

    #[tokio::test]
    async fn verify_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::open(dir.path(), FixtureMode::Record).unwrap();
        let a = args(serde_json::json!({"query": "x"}));
        store.record(TOOL_WEB_SEARCH, &a, &ToolResult::text("ok", 1)).await.unwrap();
        assert_eq!(store.verify_all().unwrap(), 1);

        std::fs::write(dir.path().join("web_search-0000000000000000.json"), "{}").unwrap();
        assert!(store.verify_all().is_err());
    }
}
