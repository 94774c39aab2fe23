//! The five-tool platform behind a uniform dispatch interface.
//!
//! Tools: `im_zoom_in` (region crop/zoom), `zoom_v_search` (object grounding
//! + visual search against the local retrieval index), `web_search`,
//! `url_visit`, and `code_interpreter`. Dispatch validates arguments against
//! each tool's schema, enforces per-tool concurrency caps and rate limits,
//! and routes through the record/replay fixture store when one is configured.
//!
//! Every invocation yields either a [`ToolResult`] or a typed [`ToolError`];
//! adversarial arguments never panic the platform.

pub mod code;
pub mod crop;
pub mod fixture;
pub mod limits;
pub mod url;
pub mod visual;
pub mod web;

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::{ChatCompletion, EmbedBackend, FetchBackend, SearchBackend, TransportError};
use crate::traj::ToolInvocation;

pub const TOOL_ZOOM: &str = "im_zoom_in";
pub const TOOL_VISUAL_SEARCH: &str = "zoom_v_search";
pub const TOOL_WEB_SEARCH: &str = "web_search";
pub const TOOL_URL_VISIT: &str = "url_visit";
pub const TOOL_CODE: &str = "code_interpreter";

/// Pixel bounding box; (x1, y1) is the top-left corner, (x2, y2) the
/// bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl BBox {
    pub fn from_values(v: &[i64]) -> Option<BBox> {
        match v {
            [x1, y1, x2, y2] => Some(BBox { x1: *x1, y1: *y1, x2: *x2, y2: *y2 }),
            _ => None,
        }
    }

    /// Clamp to image bounds first, then require a non-empty box.
    pub fn clamp_to(&self, width: u32, height: u32) -> Result<(u32, u32, u32, u32), ToolError> {
        let cx = |x: i64| x.clamp(0, width as i64) as u32;
        let cy = |y: i64| y.clamp(0, height as i64) as u32;
        let (x1, y1, x2, y2) = (cx(self.x1), cy(self.y1), cx(self.x2), cy(self.y2));
        if x1 >= x2 || y1 >= y2 {
            return Err(ToolError::InvalidBBox(format!(
                "box [{}, {}, {}, {}] is empty after clamping to {}x{}",
                self.x1, self.y1, self.x2, self.y2, width, height
            )));
        }
        Ok((x1, y1, x2, y2))
    }
}

/// Closed category set accepted by the visual-search tool and the retrieval
/// index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Plant,
    Animal,
    Car,
    Person,
    Landmark,
    Vegetable,
    Cuisine,
    Logo,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Plant,
        Category::Animal,
        Category::Car,
        Category::Person,
        Category::Landmark,
        Category::Vegetable,
        Category::Cuisine,
        Category::Logo,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Plant => "plant",
            Category::Animal => "animal",
            Category::Car => "car",
            Category::Person => "person",
            Category::Landmark => "landmark",
            Category::Vegetable => "vegetable",
            Category::Cuisine => "cuisine",
            Category::Logo => "logo",
        }
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category '{s}'"))
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One ranked web-search result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResultItem {
    pub id: u32,
    pub title: String,
    pub content: String,
    pub url: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
}

mod base64_bytes {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(de)?;
        base64::engine::general_purpose::STANDARD
            .decode(s)
            .map_err(serde::de::Error::custom)
    }
}

/// Environment observation produced by a tool. Exactly one payload variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolPayload {
    Text { text: String },
    Image {
        #[serde(with = "base64_bytes")]
        png: Vec<u8>,
    },
    Structured { value: serde_json::Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub payload: ToolPayload,
    pub latency_ms: u64,
}

impl ToolResult {
    pub fn text(text: impl Into<String>, latency_ms: u64) -> Self {
        ToolResult { payload: ToolPayload::Text { text: text.into() }, latency_ms }
    }

    pub fn image(png: Vec<u8>, latency_ms: u64) -> Self {
        ToolResult { payload: ToolPayload::Image { png }, latency_ms }
    }

    pub fn structured(value: serde_json::Value, latency_ms: u64) -> Self {
        ToolResult { payload: ToolPayload::Structured { value }, latency_ms }
    }

    /// Text form injected into the trajectory. Image payloads appear as an
    /// `<image>` placeholder; the bytes ride along as a message attachment.
    pub fn observation_text(&self) -> String {
        match &self.payload {
            ToolPayload::Text { text } => text.clone(),
            ToolPayload::Structured { value } => value.to_string(),
            ToolPayload::Image { .. } => "<image>".to_string(),
        }
    }

    pub fn image_bytes(&self) -> Option<&[u8]> {
        match &self.payload {
            ToolPayload::Image { png } => Some(png),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("unknown tool: {0}")]
    ToolNotFound(String),
    #[error("invalid arguments: {0}")]
    ArgValidation(String),
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("tool timed out after {0} ms")]
    Timeout(u64),
    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),
    #[error("image decode failure: {0}")]
    ImageDecode(String),
    #[error("no exemplars indexed for category {0}")]
    EmptyIndexForCategory(Category),
    #[error("fetch failure: {0}")]
    FetchFailure(String),
    #[error("window [{a}, {b}) out of range for content of {len} characters")]
    WindowOutOfRange { a: usize, b: usize, len: usize },
    #[error("assistant failure: {0}")]
    AssistantFailure(String),
    #[error("sandbox timed out after {0} ms")]
    SandboxTimeout(u64),
    #[error("sandbox violation: {detail}")]
    SandboxViolation { detail: String, stderr: String },
    #[error("sandbox launch failure: {0}")]
    LaunchFailure(String),
    #[error("fixture miss for {tool} (key {key})")]
    FixtureMiss { tool: String, key: String },
    #[error("fixture store corrupt: {0}")]
    StoreCorrupt(String),
}

impl From<TransportError> for ToolError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout(ms) => ToolError::Timeout(ms),
            other => ToolError::BackendFailure(other.to_string()),
        }
    }
}

/// Argument value kinds the schemas understand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgKind {
    Str,
    NonEmptyStr,
    BBox,
    Category,
    Window,
    NonNegInt,
}

#[derive(Debug, Clone)]
pub struct ArgSpec {
    pub name: &'static str,
    pub required: bool,
    pub kind: ArgKind,
}

/// Static description of one tool: wire name, argument schema, and whether
/// its results come from external services (and therefore go through the
/// fixture store).
#[derive(Debug, Clone)]
pub struct ToolSpec {
    pub name: &'static str,
    pub args: Vec<ArgSpec>,
    pub fixture_backed: bool,
}

/// The five tool specs.
pub fn tool_specs() -> Vec<ToolSpec> {
    let arg = |name, required, kind| ArgSpec { name, required, kind };
    vec![
        ToolSpec {
            name: TOOL_ZOOM,
            args: vec![
                arg("bbox_2d", true, ArgKind::BBox),
                arg("image_index", false, ArgKind::NonNegInt),
            ],
            fixture_backed: false,
        },
        ToolSpec {
            name: TOOL_VISUAL_SEARCH,
            args: vec![
                arg("bbox_2d", true, ArgKind::BBox),
                arg("category", true, ArgKind::Category),
                arg("image_index", false, ArgKind::NonNegInt),
            ],
            fixture_backed: false,
        },
        ToolSpec {
            name: TOOL_WEB_SEARCH,
            args: vec![arg("query", true, ArgKind::NonEmptyStr)],
            fixture_backed: true,
        },
        ToolSpec {
            name: TOOL_URL_VISIT,
            args: vec![
                arg("url", true, ArgKind::NonEmptyStr),
                arg("window", false, ArgKind::Window),
                arg("goal", false, ArgKind::Str),
            ],
            fixture_backed: true,
        },
        ToolSpec {
            name: TOOL_CODE,
            args: vec![arg("code", true, ArgKind::Str)],
            fixture_backed: false,
        },
    ]
}

pub(crate) fn as_integral(v: &serde_json::Value) -> Option<i64> {
    if let Some(i) = v.as_i64() {
        return Some(i);
    }
    // Models occasionally emit 100.0 for 100; accept integral floats.
    v.as_f64().filter(|f| f.fract() == 0.0 && f.abs() < i64::MAX as f64).map(|f| f as i64)
}

fn check_kind(name: &str, kind: ArgKind, v: &serde_json::Value) -> Result<(), String> {
    match kind {
        ArgKind::Str => v.is_string().then_some(()).ok_or(format!("{name} must be a string")),
        ArgKind::NonEmptyStr => match v.as_str() {
            Some(s) if !s.trim().is_empty() => Ok(()),
            Some(_) => Err(format!("{name} must be non-empty")),
            None => Err(format!("{name} must be a string")),
        },
        ArgKind::BBox => {
            let arr = v.as_array().ok_or(format!("{name} must be [x1, y1, x2, y2]"))?;
            if arr.len() != 4 || arr.iter().any(|x| as_integral(x).is_none()) {
                return Err(format!("{name} must be four integer pixel coordinates"));
            }
            Ok(())
        }
        ArgKind::Category => {
            let s = v.as_str().ok_or(format!("{name} must be a string"))?;
            s.parse::<Category>().map(|_| ()).map_err(|e| e)
        }
        ArgKind::Window => {
            let arr = v.as_array().ok_or(format!("{name} must be [a, b]"))?;
            let ints: Vec<_> = arr.iter().filter_map(as_integral).collect();
            if ints.len() != 2 || ints.iter().any(|i| *i < 0) {
                return Err(format!("{name} must be two non-negative integers"));
            }
            Ok(())
        }
        ArgKind::NonNegInt => match as_integral(v) {
            Some(i) if i >= 0 => Ok(()),
            _ => Err(format!("{name} must be a non-negative integer")),
        },
    }
}

/// Normalize argument aliases (`bbox` → `bbox_2d`) and validate against the
/// tool's schema. Unknown keys are rejected.
pub fn validate_args(
    spec: &ToolSpec,
    arguments: &serde_json::Value,
) -> Result<serde_json::Map<String, serde_json::Value>, ToolError> {
    let obj = arguments
        .as_object()
        .ok_or_else(|| ToolError::ArgValidation("arguments must be an object".into()))?;
    let mut normalized = serde_json::Map::new();
    for (k, v) in obj {
        let key = if k == "bbox" { "bbox_2d" } else { k.as_str() };
        if normalized.insert(key.to_string(), v.clone()).is_some() {
            return Err(ToolError::ArgValidation(format!("duplicate argument {key}")));
        }
    }
    for (k, v) in &normalized {
        let Some(arg) = spec.args.iter().find(|a| a.name == k) else {
            return Err(ToolError::ArgValidation(format!(
                "unknown argument {k} for {}",
                spec.name
            )));
        };
        check_kind(k, arg.kind, v).map_err(ToolError::ArgValidation)?;
    }
    for arg in spec.args.iter().filter(|a| a.required) {
        if !normalized.contains_key(arg.name) {
            return Err(ToolError::ArgValidation(format!(
                "missing required argument {} for {}",
                arg.name, spec.name
            )));
        }
    }
    Ok(normalized)
}

/// Per-invocation context: the episode's images, first input image first.
/// Crop and visual search operate on `images[image_index]` (default 0).
#[derive(Debug, Clone, Default)]
pub struct DispatchContext {
    pub images: Vec<Arc<Vec<u8>>>,
}

/// External service handles the platform routes to.
#[derive(Clone)]
pub struct ToolBackends {
    pub search: Arc<dyn SearchBackend>,
    pub fetch: Arc<dyn FetchBackend>,
    pub assistant: Arc<dyn ChatCompletion>,
    pub embed: Arc<dyn EmbedBackend>,
}

/// The assembled platform: backends, optional retrieval index, optional
/// fixture store, concurrency limits, and sandbox policy.
pub struct ToolPlatform {
    pub backends: ToolBackends,
    pub index: Option<Arc<crate::retrieval::Index>>,
    pub fixtures: Option<Arc<fixture::FixtureStore>>,
    pub limits: limits::ToolLimits,
    pub sandbox: code::SandboxLimits,
    specs: Vec<ToolSpec>,
}

impl ToolPlatform {
    pub fn new(backends: ToolBackends) -> Self {
        ToolPlatform {
            backends,
            index: None,
            fixtures: None,
            limits: limits::ToolLimits::default(),
            sandbox: code::SandboxLimits::default(),
            specs: tool_specs(),
        }
    }

    pub fn with_index(mut self, index: Arc<crate::retrieval::Index>) -> Self {
        self.index = Some(index);
        self
    }

    pub fn with_fixtures(mut self, store: Arc<fixture::FixtureStore>) -> Self {
        self.fixtures = Some(store);
        self
    }

    pub fn with_limits(mut self, limits: limits::ToolLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn with_sandbox(mut self, sandbox: code::SandboxLimits) -> Self {
        self.sandbox = sandbox;
        self
    }

    pub fn spec(&self, name: &str) -> Option<&ToolSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Validate, rate-limit, and route one invocation. Fixture-backed tools
    /// consult the store according to its mode; local tools always execute.
    pub async fn dispatch(
        &self,
        inv: &ToolInvocation,
        ctx: &DispatchContext,
    ) -> Result<ToolResult, ToolError> {
        let spec = self
            .spec(&inv.name)
            .ok_or_else(|| ToolError::ToolNotFound(inv.name.clone()))?
            .clone();
        let args = validate_args(&spec, &inv.arguments)?;

        let _permit = self.limits.acquire(&inv.name).await;

        if spec.fixture_backed {
            if let Some(store) = &self.fixtures {
                match store.mode() {
                    fixture::FixtureMode::Replay | fixture::FixtureMode::ReplayLenient => {
                        return store.replay(&inv.name, &args).await;
                    }
                    fixture::FixtureMode::Record => {
                        let result = self.execute(&spec, &args, ctx).await?;
                        store.record(&inv.name, &args, &result).await?;
                        return Ok(result);
                    }
                    fixture::FixtureMode::Off => {}
                }
            }
        }
        self.execute(&spec, &args, ctx).await
    }

    async fn execute(
        &self,
        spec: &ToolSpec,
        args: &serde_json::Map<String, serde_json::Value>,
        ctx: &DispatchContext,
    ) -> Result<ToolResult, ToolError> {
        let started = std::time::Instant::now();
        let elapsed = |started: std::time::Instant| started.elapsed().as_millis() as u64;
        match spec.name {
            TOOL_ZOOM => {
                let image = self.context_image(args, ctx)?;
                let bbox = bbox_arg(args)?;
                let png = crop::crop_zoom(&image, &bbox)?;
                Ok(ToolResult::image(png, elapsed(started)))
            }
            TOOL_VISUAL_SEARCH => {
                let image = self.context_image(args, ctx)?;
                let bbox = bbox_arg(args)?;
                let category: Category = args["category"]
                    .as_str()
                    .expect("validated")
                    .parse()
                    .expect("validated");
                let index = self.index.as_ref().ok_or_else(|| {
                    ToolError::BackendFailure("no retrieval index configured".into())
                })?;
                let line = visual::visual_search(
                    &image,
                    &bbox,
                    category,
                    self.backends.embed.as_ref(),
                    index,
                )
                .await?;
                Ok(ToolResult::text(line, elapsed(started)))
            }
            TOOL_WEB_SEARCH => {
                let query = args["query"].as_str().expect("validated");
                let value = web::web_search(query, self.backends.search.as_ref()).await?;
                Ok(ToolResult::structured(value, elapsed(started)))
            }
            TOOL_URL_VISIT => {
                let value = url::url_visit(
                    args,
                    self.backends.fetch.as_ref(),
                    self.backends.assistant.as_ref(),
                )
                .await?;
                Ok(ToolResult::structured(value, elapsed(started)))
            }
            TOOL_CODE => {
                let source = args["code"].as_str().expect("validated");
                code::run_python(source, &self.sandbox).await
            }
            other => Err(ToolError::ToolNotFound(other.to_string())),
        }
    }

    fn context_image(
        &self,
        args: &serde_json::Map<String, serde_json::Value>,
        ctx: &DispatchContext,
    ) -> Result<Arc<Vec<u8>>, ToolError> {
        let index = args
            .get("image_index")
            .and_then(as_integral)
            .unwrap_or(0) as usize;
        ctx.images.get(index).cloned().ok_or_else(|| {
            ToolError::ArgValidation(format!(
                "image_index {index} out of range ({} image(s) available)",
                ctx.images.len()
            ))
        })
    }
}

fn bbox_arg(args: &serde_json::Map<String, serde_json::Value>) -> Result<BBox, ToolError> {
    let arr = args["bbox_2d"].as_array().expect("validated");
    let vals: Vec<i64> = arr.iter().filter_map(as_integral).collect();
    BBox::from_values(&vals)
        .ok_or_else(|| ToolError::ArgValidation("bbox_2d must have four coordinates".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_for(name: &str) -> ToolSpec {
        tool_specs().into_iter().find(|s| s.name == name).unwrap()
    }

    #[test]
    fn category_parse_round_trip() {
        for c in Category::ALL {
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
        }
        assert!("fly".parse::<Category>().is_err());
    }

    #[test]
    fn bbox_clamps_then_rejects_empty() {
        let b = BBox { x1: -10, y1: 5, x2: 50, y2: 400 };
        assert_eq!(b.clamp_to(300, 300).unwrap(), (0, 5, 50, 300));
        let inverted = BBox { x1: 200, y1: 50, x2: 100, y2: 80 };
        assert!(matches!(inverted.clamp_to(300, 300), Err(ToolError::InvalidBBox(_))));
    }

    #[test]
    fn validate_requires_and_rejects() {
        let spec = spec_for(TOOL_VISUAL_SEARCH);
        let missing = serde_json::json!({"category": "person"});
        assert!(matches!(validate_args(&spec, &missing), Err(ToolError::ArgValidation(_))));
        let unknown = serde_json::json!({"bbox_2d": [0,0,1,1], "category": "person", "zoom": 2});
        assert!(matches!(validate_args(&spec, &unknown), Err(ToolError::ArgValidation(_))));
        let ok = serde_json::json!({"bbox_2d": [0,0,1,1], "category": "person"});
        assert!(validate_args(&spec, &ok).is_ok());
    }

    #[test]
    fn bbox_alias_accepted() {
        let spec = spec_for(TOOL_ZOOM);
        let args = serde_json::json!({"bbox": [0, 0, 10, 10]});
        let normalized = validate_args(&spec, &args).unwrap();
        assert!(normalized.contains_key("bbox_2d"));
    }

    #[test]
    fn integral_floats_accepted() {
        let spec = spec_for(TOOL_ZOOM);
        let args = serde_json::json!({"bbox_2d": [0.0, 0.0, 10.0, 10.0]});
        assert!(validate_args(&spec, &args).is_ok());
        let frac = serde_json::json!({"bbox_2d": [0.5, 0, 10, 10]});
        assert!(validate_args(&spec, &frac).is_err());
    }

    #[test]
    fn payload_serde_round_trip() {
        let r = ToolResult::image(vec![1, 2, 3, 250], 7);
        let text = serde_json::to_string(&r).unwrap();
        let back: ToolResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.image_bytes(), Some(&[1u8, 2, 3, 250][..]));
    }

    #[test]
    fn observation_text_variants() {
        assert_eq!(ToolResult::text("hi", 0).observation_text(), "hi");
        assert_eq!(ToolResult::image(vec![0], 0).observation_text(), "<image>");
        let s = ToolResult::structured(serde_json::json!({"a": 1}), 0);
        assert_eq!(s.observation_text(), r#"{"a":1}"#);
    }
}
