//! Dictionary phonology records, their English rendering, LLM prompt
//! assembly, pluggable LLM clients and output post-processing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hms::UsedHands;
use crate::motion::Handedness;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    #[serde(alias = "one handed", alias = "one-handed")]
    OneHanded,
    #[serde(alias = "double handed", alias = "double-handed")]
    DoubleHanded,
    #[serde(alias = "two handed", alias = "two-handed")]
    TwoHanded,
    Symmetric,
    Alternating,
    #[serde(alias = "nondominant still", alias = "non_dominant_still")]
    NondominantStill,
    #[serde(alias = "forearm rotation")]
    ForearmRotation,
    #[serde(alias = "handshape change")]
    HandshapeChange,
}

impl Tag {
    /// Order in which tag lines are rendered.
    pub const RENDER_ORDER: [Tag; 8] = [
        Tag::ForearmRotation,
        Tag::OneHanded,
        Tag::DoubleHanded,
        Tag::TwoHanded,
        Tag::NondominantStill,
        Tag::HandshapeChange,
        Tag::Symmetric,
        Tag::Alternating,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Tag::OneHanded => "one_handed",
            Tag::DoubleHanded => "double_handed",
            Tag::TwoHanded => "two_handed",
            Tag::Symmetric => "symmetric",
            Tag::Alternating => "alternating",
            Tag::NondominantStill => "nondominant_still",
            Tag::ForearmRotation => "forearm_rotation",
            Tag::HandshapeChange => "handshape_change",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandPair {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nondominant: Option<String>,
}

/// Relations accepted as `facing_parts` keys, in render order.
pub const FACING_RELATIONS: [&str; 4] = [
    "dominant_facing_nondominant",
    "nondominant_facing_dominant",
    "dominant_facing_location",
    "nondominant_facing_location",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhonologyRecord {
    pub gloss_id: String,
    #[serde(default)]
    pub word_keywords: Vec<String>,
    #[serde(default)]
    pub handshape_initial: HandPair,
    #[serde(default)]
    pub handshape_final: HandPair,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_initial: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_final: Option<String>,
    #[serde(default)]
    pub facing_parts: BTreeMap<String, String>,
    #[serde(default)]
    pub tags: BTreeSet<Tag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signer_handedness: Option<Handedness>,
}

impl PhonologyRecord {
    pub fn is_one_handed(&self) -> bool {
        self.tags.contains(&Tag::OneHanded)
    }

    pub fn used_hands(&self) -> UsedHands {
        if self.is_one_handed() {
            UsedHands::Dominant
        } else {
            UsedHands::Both
        }
    }

    /// Location tokens in order, initial first, without repeats.
    pub fn locations(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for l in [&self.location_initial, &self.location_final].into_iter().flatten() {
            if !out.contains(&l.as_str()) {
                out.push(l);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.gloss_id.trim().is_empty() {
            return Err(Error::schema("gloss_id", "must be nonempty"));
        }
        if self.is_one_handed() && (self.tags.contains(&Tag::DoubleHanded) || self.tags.contains(&Tag::TwoHanded)) {
            return Err(Error::schema("tags", "one_handed excludes double_handed and two_handed"));
        }
        for key in self.facing_parts.keys() {
            if !FACING_RELATIONS.contains(&key.as_str()) {
                return Err(Error::schema(format!("facing_parts.{key}"), "unknown relation"));
            }
        }
        Ok(())
    }
}

pub fn parse_record(json: &str) -> Result<PhonologyRecord> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let record: PhonologyRecord = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::schema(path, e.into_inner().to_string())
    })?;
    record.validate()?;
    Ok(record)
}

pub fn read_records(path: &Path) -> Result<Vec<PhonologyRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_record(l).map_err(|e| match e {
                Error::SchemaViolation { path, message } => Error::schema(format!("line {}: {path}", i + 1), message),
                other => other,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Lexicon and attribute lines
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeLexicon {
    /// category -> token -> alternative phrasings.
    #[serde(flatten)]
    pub categories: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl AttributeLexicon {
    pub fn bundled() -> Self {
        serde_json::from_str(include_str!("../assets/lexicon.json")).expect("bundled lexicon is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let lex: Self = serde_json::from_str(text)?;
        for (cat, entries) in &lex.categories {
            for (tok, alts) in entries {
                if alts.is_empty() {
                    return Err(Error::schema(format!("{cat}.{tok}"), "no alternatives"));
                }
            }
        }
        Ok(lex)
    }

    pub fn alternatives(&self, category: &str, token: &str) -> Result<&[String]> {
        self.categories
            .get(category)
            .and_then(|c| c.get(token))
            .map(Vec::as_slice)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::MissingLexiconEntry(format!("{category}:{token}")))
    }

    fn pick(&self, category: &str, token: &str, rng: &mut ChaCha8Rng) -> Result<String> {
        let alts = self.alternatives(category, token)?;
        Ok(alts[rng.gen_range(0..alts.len())].clone())
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn location_name(token: &str) -> String {
    token.replace('_', " ")
}

/// One line per populated attribute, without the leading "- ".
pub fn attributes_to_lines(r: &PhonologyRecord, lex: &AttributeLexicon, seed: u64) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();
    for (when, pair) in [("Initial", &r.handshape_initial), ("Final", &r.handshape_final)] {
        if let Some(t) = &pair.dominant {
            lines.push(format!("{when} dominant hand shape: {}", lex.pick("handshape", t, &mut rng)?));
        }
        if let Some(t) = &pair.nondominant {
            lines.push(format!("{when} non-dominant hand shape: {}", lex.pick("handshape", t, &mut rng)?));
        }
    }
    let subject = if r.is_one_handed() { "dominant hand location" } else { "sign location" };
    match (&r.location_initial, &r.location_final) {
        (Some(a), Some(b)) if a != b => {
            lines.push(format!("Initial {subject}: {}", lex.pick("location", a, &mut rng)?));
            lines.push(format!("Final {subject}: {}", lex.pick("location", b, &mut rng)?));
        }
        (Some(a), _) | (None, Some(a)) => {
            lines.push(format!("{}: {}", capitalize(subject), lex.pick("location", a, &mut rng)?));
        }
        (None, None) => {}
    }
    let loc = r.location_initial.as_deref().or(r.location_final.as_deref()).map(location_name);
    for rel in FACING_RELATIONS {
        let Some(part) = r.facing_parts.get(rel) else { continue };
        let phrase = lex.pick("hand_part", part, &mut rng)?;
        let label = match rel {
            "dominant_facing_nondominant" => "Location on the dominant hand that the non-dominant hand is facing".to_string(),
            "nondominant_facing_dominant" => "Location on the non-dominant hand that the dominant hand is facing".to_string(),
            "dominant_facing_location" => format!("Dominant hand part facing the {}", loc.as_deref().unwrap_or("body")),
            _ => format!("Subordinate hand part facing the {}", loc.as_deref().unwrap_or("body")),
        };
        lines.push(format!("{label}: {phrase}"));
    }
    for tag in Tag::RENDER_ORDER {
        if r.tags.contains(&tag) {
            lines.push(capitalize(&lex.pick("tag", tag.token(), &mut rng)?));
        }
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------
// Prompt assembly
// ---------------------------------------------------------------------------

const USER_PREAMBLE: &str = "Use the information to describe the corresponding motion. The comment section of the model answers, when present, is here for your reference as indications of the correct practices of the task, it is not to be included in your own output.";
const INDENT: &str = "       ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentLine {
    pub text: String,
    pub hms_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub attributes: Vec<String>,
    pub hms: Vec<String>,
    pub descriptions: [String; 3],
    #[serde(default)]
    pub comment: Vec<CommentLine>,
}

pub fn bundled_exemplars() -> Vec<Exemplar> {
    serde_json::from_str(include_str!("../assets/exemplars.json")).expect("bundled exemplars are valid")
}

fn json_escape(s: &str) -> String {
    let quoted = serde_json::to_string(s).expect("string serializes");
    quoted[1..quoted.len() - 1].to_string()
}

fn user_turn(out: &mut String, attributes: &[String], hms: Option<&[String]>, outer: &str) {
    writeln!(out, "{outer}{{").unwrap();
    writeln!(out, "{outer}    \"role\": \"user\",").unwrap();
    writeln!(out, "{outer}    \"content\": \"{USER_PREAMBLE}").unwrap();
    let mut body: Vec<String> = vec!["ATTRIBUTES:".into()];
    body.extend(attributes.iter().map(|l| format!("- {l}")));
    if let Some(h) = hms {
        body.extend(h.iter().cloned());
    }
    let n = body.len();
    for (i, l) in body.into_iter().enumerate() {
        let close = if i + 1 == n { "\"" } else { "" };
        writeln!(out, "{INDENT}{}{close}", json_escape(&l)).unwrap();
    }
    write!(out, "{outer}}}").unwrap();
}

fn render_exemplar(out: &mut String, ex: &Exemplar, with_hms: bool, last: bool) {
    writeln!(out, "{{").unwrap();
    user_turn(out, &ex.attributes, with_hms.then_some(ex.hms.as_slice()), "   ");
    writeln!(out, ",").unwrap();
    writeln!(out, "   {{").unwrap();
    writeln!(out, "       \"role\": \"model\",").unwrap();
    writeln!(out, "       \"content\": {{").unwrap();
    let comment: Vec<&str> = ex
        .comment
        .iter()
        .filter(|c| with_hms || !c.hms_only)
        .map(|c| c.text.as_str())
        .collect();
    for (i, d) in ex.descriptions.iter().enumerate() {
        let sep = if i < 2 || !comment.is_empty() { "," } else { "" };
        writeln!(out, "           \"Description {}\": \"{}\"{sep}", i + 1, json_escape(d)).unwrap();
    }
    if !comment.is_empty() {
        let joined: Vec<String> = comment.iter().map(|c| json_escape(c)).collect();
        writeln!(out, "           \"Comment\": \"{}\"", joined.join("\n           ")).unwrap();
    }
    writeln!(out, "       }}").unwrap();
    writeln!(out, "   }}").unwrap();
    writeln!(out, "}}{}", if last { "" } else { "," }).unwrap();
}

/// Full prompt: instruction header, few-shot exemplars, then the query.
/// HMS content (header paragraphs and exemplar blocks) is included iff
/// `hms_block` is given.
pub fn assemble_prompt(lines: &[String], hms_block: Option<&str>, fewshot: &[Exemplar]) -> String {
    let with_hms = hms_block.is_some();
    let mut out = String::new();
    out.push_str(if with_hms {
        include_str!("../assets/prompt_header_hms.txt")
    } else {
        include_str!("../assets/prompt_header.txt")
    });
    out.push('\n');
    for (i, ex) in fewshot.iter().enumerate() {
        render_exemplar(&mut out, ex, with_hms, i + 1 == fewshot.len());
    }
    out.push('\n');
    out.push_str(include_str!("../assets/prompt_query.txt"));
    let hms_lines: Option<Vec<String>> = hms_block.map(|b| b.lines().map(str::to_string).collect());
    user_turn(&mut out, lines, hms_lines.as_deref(), "");
    out.push('\n');
    out
}

// ---------------------------------------------------------------------------
// LLM clients
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub seed: u64,
}

impl LlmRequest {
    /// SHA-256 over the canonical (key-sorted, compact) JSON of the request.
    pub fn fixture_key(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        canonical_hash(&value)
    }
}

/// Hex SHA-256 of the canonical serialization of a JSON value. Object keys
/// are sorted, so field order in the source does not matter.
pub fn canonical_hash(value: &Value) -> String {
    fn canon(v: &Value) -> Value {
        match v {
            Value::Object(m) => {
                let sorted: BTreeMap<&String, Value> = m.iter().map(|(k, v)| (k, canon(v))).collect();
                Value::Object(sorted.into_iter().map(|(k, v)| (k.clone(), v)).collect())
            }
            Value::Array(a) => Value::Array(a.iter().map(canon).collect()),
            other => other.clone(),
        }
    }
    let text = serde_json::to_string(&canon(value)).expect("value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub descriptions: [String; 3],
    pub raw: String,
    pub latency_ms: u64,
}

pub trait LlmClient: Send + Sync {
    /// Raw completion text for a request.
    fn complete(&self, req: &LlmRequest) -> Result<String>;
}

#[derive(Debug, Clone)]
pub struct HttpClient {
    pub url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff: Duration,
}

/// Environment variable holding the bearer token for [`HttpClient`].
pub const API_KEY_ENV: &str = "HANDMOTION_LLM_API_KEY";

impl HttpClient {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            timeout: Duration::from_secs(120),
            max_retries: 4,
            backoff: Duration::from_millis(500),
        }
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, req: &LlmRequest) -> Result<String> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let body = serde_json::to_value(req)?;
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            let mut call = agent.post(&self.url);
            if let Some(key) = &self.api_key {
                call = call.set("Authorization", &format!("Bearer {key}"));
            }
            match call.send_json(body.clone()) {
                Ok(resp) => {
                    let v: Value = resp
                        .into_json()
                        .map_err(|e| Error::EndpointError(format!("reading response: {e}")))?;
                    return v
                        .get("text")
                        .and_then(Value::as_str)
                        .map(str::to_string)
                        .ok_or_else(|| Error::ParseError("response has no `text` field".into()));
                }
                Err(ureq::Error::Status(code, _)) if code < 500 && code != 429 => {
                    return Err(Error::EndpointError(format!("HTTP {code}")));
                }
                Err(e) => {
                    log::warn!("LLM request attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(Error::EndpointError(last))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fixture {
    pub request: LlmRequest,
    pub text: String,
}

/// Replays recorded responses from `<dir>/<fixture_key>.json`.
#[derive(Debug, Clone)]
pub struct FixtureClient {
    pub dir: PathBuf,
}

impl FixtureClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, req: &LlmRequest) -> PathBuf {
        self.dir.join(format!("{}.json", req.fixture_key()))
    }

    pub fn record(&self, req: &LlmRequest, text: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path_for(req);
        let fixture = Fixture {
            request: req.clone(),
            text: text.to_string(),
        };
        let body = serde_json::to_string_pretty(&fixture)?;
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

impl LlmClient for FixtureClient {
    fn complete(&self, req: &LlmRequest) -> Result<String> {
        let path = self.path_for(req);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::FixtureMiss(req.fixture_key()));
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        let fixture: Fixture = serde_json::from_str(&text)?;
        Ok(fixture.text)
    }
}

/// Builds a client from `fixtures:DIR` or an HTTP(S) URL.
pub fn client_from_spec(spec: &str) -> Result<Box<dyn LlmClient>> {
    if let Some(dir) = spec.strip_prefix("fixtures:") {
        Ok(Box::new(FixtureClient::new(dir)))
    } else if spec.starts_with("http://") || spec.starts_with("https://") {
        Ok(Box::new(HttpClient::new(spec)))
    } else {
        Err(Error::InvalidConfig(format!("LLM endpoint must be a URL or fixtures:DIR, got `{spec}`")))
    }
}

/// Extracts "Description 1".."Description 3" from a model answer.
pub fn parse_descriptions(raw: &str) -> Result<[String; 3]> {
    let from_json = raw.find('{').zip(raw.rfind('}')).and_then(|(a, b)| {
        let v: Value = serde_json::from_str(&raw[a..=b]).ok()?;
        let get = |i: usize| v.get(format!("Description {i}"))?.as_str().map(|s| s.trim().to_string());
        Some([get(1)?, get(2)?, get(3)?])
    });
    if let Some(d) = from_json {
        return Ok(d);
    }
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r#""Description (\d)"\s*:\s*"((?:[^"\\]|\\.)*)""#).unwrap());
    let mut found: BTreeMap<usize, String> = BTreeMap::new();
    for c in re.captures_iter(raw) {
        let i: usize = c[1].parse().unwrap_or(0);
        let text: String = serde_json::from_str(&format!("\"{}\"", &c[2])).unwrap_or_else(|_| c[2].to_string());
        found.entry(i).or_insert(text.trim().to_string());
    }
    match (found.remove(&1), found.remove(&2), found.remove(&3)) {
        (Some(a), Some(b), Some(c)) => Ok([a, b, c]),
        _ => Err(Error::ParseError(format!(
            "expected three descriptions, found {}",
            re.captures_iter(raw).count()
        ))),
    }
}

pub fn generate_descriptions(req: &LlmRequest, client: &dyn LlmClient) -> Result<LlmResponse> {
    let start = Instant::now();
    let raw = client.complete(req)?;
    let descriptions = parse_descriptions(&raw)?;
    Ok(LlmResponse {
        descriptions,
        raw,
        latency_ms: start.elapsed().as_millis() as u64,
    })
}

/// Runs requests with at most `max_in_flight` concurrent calls; results keep
/// the input order.
pub fn generate_batch(reqs: &[LlmRequest], client: &dyn LlmClient, max_in_flight: usize) -> Vec<Result<LlmResponse>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        use rayon::prelude::*;
        reqs.par_iter().map(|r| generate_descriptions(r, client)).collect()
    })
}

// ---------------------------------------------------------------------------
// Output post-processing
// ---------------------------------------------------------------------------

/// Sentences matching this pattern claim that the non-dominant hand does
/// not move.
pub const STILL_PATTERN: &str = r"(?i)\b(non-dominant|nondominant|non dominant|subordinate|other|passive|weak)\s+hand\b.*\b(remains?|remaining|stays?|staying|is|are|kept|keeps?|held|rests?)\b.*\b(still|stationary|static|motionless|immobile|unmoving|in place)\b";

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for i in 0..bytes.len() {
        if matches!(bytes[i], b'.' | b'!' | b'?') && (i + 1 == bytes.len() || bytes[i + 1].is_ascii_whitespace()) {
            out.push(text[start..=i].trim());
            start = i + 1;
        }
    }
    if start < text.len() && !text[start..].trim().is_empty() {
        out.push(text[start..].trim());
    }
    out
}

/// Drops "non-dominant hand stays still" sentences from one-handed signs
/// and normalizes whitespace.
pub fn postprocess_descriptions(resp: &LlmResponse, r: &PhonologyRecord) -> [String; 3] {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(STILL_PATTERN).unwrap());
    resp.descriptions.clone().map(|d| {
        let d = normalize_ws(&d);
        if !r.is_one_handed() {
            return d;
        }
        split_sentences(&d)
            .into_iter()
            .filter(|s| !re.is_match(s))
            .collect::<Vec<_>>()
            .join(" ")
    })
}

fn match_case(template: &str, word: &str) -> String {
    let letters: Vec<char> = template.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        word.to_uppercase()
    } else if letters.first().is_some_and(|c| c.is_uppercase()) {
        capitalize(word)
    } else {
        word.to_string()
    }
}

/// Replaces dominant/non-dominant with right/left for the given signer.
pub fn localize_handedness(text: &str, handedness: Handedness) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)\b(non[- ]?)?dominant\b").unwrap());
    let (dom, non) = match handedness {
        Handedness::Right => ("right", "left"),
        Handedness::Left => ("left", "right"),
    };
    re.replace_all(text, |c: &regex::Captures| {
        let word = if c.get(1).is_some() { non } else { dom };
        match_case(&c[0], word)
    })
    .into_owned()
}
