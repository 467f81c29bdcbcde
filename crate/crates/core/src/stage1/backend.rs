//! Translator backends: a deterministic scene-lexicon mock and an HTTP
//! client for a remote multimodal model.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::prompt::requests_scene_step;
use super::region::TextRegion;
use crate::corpus::{builtin_texts, LangPair};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendError {
    pub retriable: bool,
    pub message: String,
}

impl BackendError {
    pub fn retriable(message: impl Into<String>) -> Self {
        Self {
            retriable: true,
            message: message.into(),
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            retriable: false,
            message: message.into(),
        }
    }
}

/// Everything a backend sees for one region.
#[derive(Debug, Clone, Copy)]
pub struct BackendRequest<'a> {
    pub image_id: &'a str,
    pub image: &'a Raster,
    pub region: &'a TextRegion,
    pub prompt: &'a str,
    pub src_lang: &'a str,
    pub tgt_lang: &'a str,
}

pub trait TranslatorBackend: Send + Sync {
    fn id(&self) -> &str;

    fn mode(&self) -> BackendMode;

    fn languages(&self) -> &[LangPair];

    fn supports(&self, src: &str, tgt: &str) -> bool {
        self.languages().iter().any(|l| l.src == src && l.tgt == tgt)
    }

    /// Raw model output for one region.
    fn complete(&self, request: &BackendRequest<'_>) -> Result<String, BackendError>;

    /// Extra attempts after a retriable failure.
    fn max_retries(&self) -> u32 {
        0
    }

    /// Delay before the first retry; doubles on each further retry.
    fn retry_backoff(&self) -> Duration {
        Duration::ZERO
    }

    /// Backends that cannot serve concurrent calls return true.
    fn single_flight(&self) -> bool {
        false
    }
}

/// Translation choices keyed by source text, then by scene tag. The tag
/// [`DEFAULT_TAG`] holds the context-free translation.
pub type Lexicon = BTreeMap<String, BTreeMap<String, String>>;

pub const DEFAULT_TAG: &str = "*";

/// Deterministic stand-in for image understanding: a set of scene tags plus
/// scene-specific lexicon entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScene {
    pub image_id: String,
    #[serde(default)]
    pub context_tags: BTreeSet<String>,
    #[serde(default)]
    pub lexicon: Lexicon,
}

/// On-disk mock fixture: shared lexicon plus per-image scenes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    pub languages: Vec<String>,
    #[serde(default)]
    pub lexicon: Lexicon,
    #[serde(default)]
    pub scenes: Vec<MockScene>,
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    id: String,
    languages: Vec<LangPair>,
    lexicon: Lexicon,
    scenes: BTreeMap<String, MockScene>,
}

impl MockBackend {
    pub fn new(languages: Vec<LangPair>, lexicon: Lexicon, scenes: Vec<MockScene>) -> Self {
        Self {
            id: "mock".into(),
            languages,
            lexicon,
            scenes: scenes.into_iter().map(|s| (s.image_id.clone(), s)).collect(),
        }
    }

    pub fn from_fixture(fixture: MockFixture) -> Result<Self, String> {
        let languages = fixture
            .languages
            .iter()
            .map(|l| l.parse::<LangPair>().map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(languages, fixture.lexicon, fixture.scenes))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let fixture: MockFixture = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_fixture(fixture)
    }

    /// En→Zh fixture with the ambiguous words "Bank", "Transfer" and "Hot"
    /// and three scenes (`river`, `transit`, `food`) that disambiguate them.
    /// Every word of the bundled en-zh list has a context-free entry.
    pub fn ambiguity_fixture() -> MockFixture {
        let mut lexicon = Lexicon::new();
        for t in builtin_texts(&LangPair::new("en", "zh")).expect("bundled en-zh list") {
            lexicon.entry(t.src).or_default().insert(DEFAULT_TAG.into(), t.tgt);
        }
        for (src, default, tag, in_context) in [
            ("Bank", "银行", "river", "河岸"),
            ("Transfer", "转账", "transit", "中转"),
            ("Hot", "热的", "food", "辣的"),
        ] {
            let e = lexicon.entry(src.into()).or_default();
            e.insert(DEFAULT_TAG.into(), default.into());
            e.insert(tag.into(), in_context.into());
        }
        let scene = |id: &str, tag: &str| MockScene {
            image_id: id.into(),
            context_tags: [tag.to_owned()].into_iter().collect(),
            lexicon: Lexicon::new(),
        };
        MockFixture {
            languages: vec!["en-zh".into()],
            lexicon,
            scenes: vec![
                scene("riverside", "river"),
                scene("station", "transit"),
                scene("street-food", "food"),
            ],
        }
    }

    pub fn set_scene(&mut self, scene: MockScene) {
        self.scenes.insert(scene.image_id.clone(), scene);
    }

    /// The pure resolution rule: scene tags are consulted (in sorted order)
    /// only when `use_scene` is set; otherwise the context-free entry wins.
    pub fn resolve(&self, image_id: &str, text: &str, use_scene: bool) -> Option<String> {
        let scene = self.scenes.get(image_id);
        let entries: Vec<&BTreeMap<String, String>> = scene
            .and_then(|s| s.lexicon.get(text))
            .into_iter()
            .chain(self.lexicon.get(text))
            .collect();
        if use_scene {
            if let Some(scene) = scene {
                for tag in &scene.context_tags {
                    if let Some(t) = entries.iter().find_map(|e| e.get(tag)) {
                        return Some(t.clone());
                    }
                }
            }
        }
        entries.iter().find_map(|e| e.get(DEFAULT_TAG)).cloned()
    }
}

impl TranslatorBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn mode(&self) -> BackendMode {
        BackendMode::Mock
    }

    fn languages(&self) -> &[LangPair] {
        &self.languages
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        let text = request.region.recognized_text.trim();
        if text.is_empty() {
            return Err(BackendError::fatal("mock backend needs recognized text for the region"));
        }
        let use_scene = requests_scene_step(request.prompt);
        let translation = self
            .resolve(request.image_id, text, use_scene)
            .ok_or_else(|| BackendError::fatal(format!("no lexicon entry for {text:?}")))?;
        if use_scene {
            let tags = self
                .scenes
                .get(request.image_id)
                .map(|s| s.context_tags.iter().cloned().collect::<Vec<_>>().join(", "))
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| "unknown".into());
            Ok(format!("1: scene: {tags}\n2: {text}\n3: {translation}"))
        } else {
            Ok(format!("1: {translation}"))
        }
    }
}

/// Connection settings for a remote model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub token_env: Option<String>,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_languages")]
    pub languages: Vec<String>,
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    2
}

fn default_backoff() -> u64 {
    500
}

fn default_languages() -> Vec<String> {
    ["en-zh", "zh-en", "en-fr", "fr-en", "en-de", "de-en"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// JSON body of a remote request: one region per request, full image attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub model: String,
    pub prompt: String,
    pub image_png_base64: String,
    pub text_box: crate::geom::TextBox,
    pub src_lang: String,
    pub tgt_lang: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub output: String,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    languages: Vec<LangPair>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("config", &self.config).finish()
    }
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, String> {
        let languages = config
            .languages
            .iter()
            .map(|l| l.parse::<LangPair>().map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        Ok(Self {
            config,
            languages,
            agent,
        })
    }

    pub fn request_body(&self, request: &BackendRequest<'_>) -> Result<RemoteRequest, BackendError> {
        let png = request
            .image
            .encode_png()
            .map_err(|e| BackendError::fatal(e.to_string()))?;
        Ok(RemoteRequest {
            model: self.config.model.clone(),
            prompt: request.prompt.to_owned(),
            image_png_base64: base64::engine::general_purpose::STANDARD.encode(png),
            text_box: request.region.text_box,
            src_lang: request.src_lang.to_owned(),
            tgt_lang: request.tgt_lang.to_owned(),
        })
    }
}

impl TranslatorBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.config.model
    }

    fn mode(&self) -> BackendMode {
        BackendMode::Remote
    }

    fn languages(&self) -> &[LangPair] {
        &self.languages
    }

    fn max_retries(&self) -> u32 {
        self.config.max_retries
    }

    fn retry_backoff(&self) -> Duration {
        Duration::from_millis(self.config.backoff_ms)
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        let body = self.request_body(request)?;
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .set("Content-Type", "application/json");
        if let Some(var) = &self.config.token_env {
            let token = std::env::var(var)
                .map_err(|_| BackendError::fatal(format!("environment variable {var} is not set")))?;
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let payload = serde_json::to_string(&body).map_err(|e| BackendError::fatal(e.to_string()))?;
        match req.send_string(&payload) {
            Ok(resp) => {
                let raw = resp
                    .into_string()
                    .map_err(|e| BackendError::retriable(format!("reading response: {e}")))?;
                serde_json::from_str::<RemoteResponse>(&raw)
                    .map(|r| r.output)
                    .map_err(|e| BackendError::fatal(format!("malformed response envelope ({e}): {raw}")))
            }
            Err(ureq::Error::Status(code, resp)) => {
                let raw = resp.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {raw}");
                if code == 429 || code >= 500 {
                    Err(BackendError::retriable(msg))
                } else {
                    Err(BackendError::fatal(msg))
                }
            }
            Err(e) => Err(BackendError::retriable(format!("transport: {e}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_depends_on_scene_step() {
        let m = MockBackend::from_fixture(MockBackend::ambiguity_fixture()).unwrap();
        assert_eq!(m.resolve("riverside", "Bank", true).as_deref(), Some("河岸"));
        assert_eq!(m.resolve("riverside", "Bank", false).as_deref(), Some("银行"));
        assert_eq!(m.resolve("station", "Bank", true).as_deref(), Some("银行"));
        assert_eq!(m.resolve("nowhere", "Coffee", true).as_deref(), Some("咖啡"));
        assert_eq!(m.resolve("nowhere", "Zebra", true), None);
    }

    #[test]
    fn scene_lexicon_overrides_shared() {
        let mut m = MockBackend::from_fixture(MockBackend::ambiguity_fixture()).unwrap();
        let mut lex = Lexicon::new();
        lex.entry("Bank".into())
            .or_default()
            .insert("vault".into(), "金库".into());
        m.set_scene(MockScene {
            image_id: "v".into(),
            context_tags: ["vault".into()].into_iter().collect(),
            lexicon: lex,
        });
        assert_eq!(m.resolve("v", "Bank", true).as_deref(), Some("金库"));
        assert_eq!(m.resolve("v", "Bank", false).as_deref(), Some("银行"));
    }

    #[test]
    fn fixture_json_round_trip() {
        let f = MockBackend::ambiguity_fixture();
        let s = serde_json::to_string_pretty(&f).unwrap();
        let back: MockFixture = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn remote_config_defaults() {
        let c: RemoteConfig = serde_json::from_str(r#"{"endpoint":"http://x","model":"m"}"#).unwrap();
        assert_eq!(c.max_retries, 2);
        let b = RemoteBackend::new(c).unwrap();
        assert!(b.supports("en", "zh"));
        assert_eq!(b.mode(), BackendMode::Remote);
    }
}
