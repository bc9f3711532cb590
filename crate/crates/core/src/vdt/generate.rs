//! Two-step corpus generation: attributes for the dataset, then sentences per class.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::cache::{request_key, sha256_hex, CachedResponse, ResponseCache};
use super::client::{ChatMessage, ChatTransport, LlmClient};
use super::corpus::{ResponseRecord, VdtCorpus};
use super::parser::{parse_vdt_response, VdtMapping};
use super::prompts::{parse_attribute_lines, PromptTemplates};
use crate::error::{Error, Result};
use crate::io::write_json;

pub const ATTRIBUTES_REQUEST: &str = "attributes";

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Raw responses for a class that never parsed, written for manual repair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub class_name: String,
    pub reason: String,
    pub prompt: String,
    pub responses: Vec<String>,
}

/// Sentences for `class_name` from a parsed mapping.
///
/// The key may be the class name itself or a shortened form of it (the
/// prompt asks for the variant without the manufacturer), compared
/// case-insensitively in either direction. A single-key mapping is not
/// accepted unless its key matches.
pub fn select_class_sentences(
    map: &VdtMapping,
    class_name: &str,
    expected: usize,
) -> Result<Vec<String>> {
    let malformed = |reason: String| Error::MalformedResponse {
        class_name: class_name.to_string(),
        reason,
    };
    let want = class_name.trim().to_lowercase();
    let sentences = map
        .get(class_name)
        .or_else(|| {
            map.iter()
                .find(|(k, _)| {
                    let k = k.to_lowercase();
                    !k.is_empty() && (want.contains(&k) || k.contains(&want))
                })
                .map(|(_, v)| v)
        })
        .ok_or_else(|| malformed(format!("no key for the class among {:?}", map.keys().collect::<Vec<_>>())))?;
    let sentences: Vec<String> = sentences.iter().filter(|s| !s.is_empty()).cloned().collect();
    if sentences.is_empty() {
        return Err(malformed("no sentences".into()));
    }
    if expected > 0 && sentences.len() != expected {
        return Err(malformed(format!(
            "{} sentences for {expected} attributes",
            sentences.len()
        )));
    }
    Ok(sentences)
}

/// Result of [`VdtGenerator::generate`].
#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub corpus: VdtCorpus,
    /// Classes whose responses never parsed; see the quarantine directory.
    pub quarantined: Vec<String>,
    /// Classes answered from the cache without a request.
    pub cached: Vec<String>,
}

pub struct VdtGenerator<T: ChatTransport> {
    client: LlmClient<T>,
    templates: PromptTemplates,
    cache: Option<ResponseCache>,
    quarantine_dir: Option<PathBuf>,
}

impl<T: ChatTransport> VdtGenerator<T> {
    pub fn new(client: LlmClient<T>, templates: PromptTemplates) -> Self {
        Self {
            client,
            templates,
            cache: None,
            quarantine_dir: None,
        }
    }

    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache = Some(ResponseCache::new(dir));
        self
    }

    pub fn with_quarantine(mut self, dir: impl Into<PathBuf>) -> Self {
        self.quarantine_dir = Some(dir.into());
        self
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    fn messages(&self, user: String) -> Vec<ChatMessage> {
        let mut m = Vec::with_capacity(2);
        if !self.templates.system_prompt.is_empty() {
            m.push(ChatMessage::system(self.templates.system_prompt.clone()));
        }
        m.push(ChatMessage::user(user));
        m
    }

    /// Sends a request, or answers it from the cache. The bool is true on a cache hit.
    fn fetch(&self, request: &str, messages: &[ChatMessage], use_cache: bool) -> Result<(CachedResponse, bool)> {
        let key = request_key(&self.client.config().model_id, messages);
        if use_cache {
            if let Some(cache) = &self.cache {
                if let Some(hit) = cache.get(&key)? {
                    return Ok((hit, true));
                }
            }
        }
        let completion = self.client.complete(messages)?;
        Ok((
            CachedResponse {
                request: request.to_string(),
                text: completion.text,
                attempts: completion.attempts,
                timestamp: unix_now(),
            },
            false,
        ))
    }

    fn store(&self, messages: &[ChatMessage], response: &CachedResponse) -> Result<()> {
        if let Some(cache) = &self.cache {
            cache.put(&request_key(&self.client.config().model_id, messages), response)?;
        }
        Ok(())
    }

    fn record(response: &CachedResponse) -> ResponseRecord {
        ResponseRecord {
            request: response.request.clone(),
            timestamp: response.timestamp,
            digest: sha256_hex(response.text.as_bytes()),
            attempts: response.attempts,
        }
    }

    /// First prompt: attribute lines that separate the given classes.
    pub fn request_attributes(&self, class_names: &[String]) -> Result<(Vec<String>, ResponseRecord)> {
        if class_names.is_empty() {
            return Err(Error::InvalidInput("class list is empty".into()));
        }
        let messages = self.messages(self.templates.attribute_request(class_names));
        let (response, _) = self.fetch(ATTRIBUTES_REQUEST, &messages, true)?;
        let lines = parse_attribute_lines(&response.text);
        if lines.is_empty() {
            return Err(Error::EmptyResponse);
        }
        self.store(&messages, &response)?;
        Ok((lines, Self::record(&response)))
    }

    /// Second prompt: one sentence per attribute for `class_name`.
    ///
    /// Malformed responses are re-requested up to `max_retries` times; after
    /// that the raw responses go to the quarantine directory and the last
    /// `MalformedResponse` is returned. Only well-formed responses are cached.
    pub fn request_class_vdt(&self, class_name: &str, attributes: &[String]) -> Result<(Vec<String>, ResponseRecord)> {
        self.class_vdt(class_name, attributes).map(|(s, r, _)| (s, r))
    }

    fn class_vdt(&self, class_name: &str, attributes: &[String]) -> Result<(Vec<String>, ResponseRecord, bool)> {
        if attributes.is_empty() {
            return Err(Error::InvalidInput("attribute list is empty".into()));
        }
        let prompt = self.templates.description_request(class_name, attributes);
        let messages = self.messages(prompt.clone());
        let mut raw = Vec::new();
        let mut last_err = None;
        for attempt in 0..=self.client.config().max_retries {
            let (response, hit) = self.fetch(class_name, &messages, attempt == 0)?;
            let parsed = parse_vdt_response(&response.text)
                .map_err(|e| Error::MalformedResponse {
                    class_name: class_name.to_string(),
                    reason: e.to_string(),
                })
                .and_then(|map| select_class_sentences(&map, class_name, attributes.len()));
            match parsed {
                Ok(sentences) => {
                    if !hit {
                        self.store(&messages, &response)?;
                    }
                    return Ok((sentences, Self::record(&response), hit));
                }
                Err(e) => {
                    log::warn!("class {class_name:?}, attempt {}: {e}", attempt + 1);
                    raw.push(response.text);
                    last_err = Some(e);
                }
            }
        }
        let err = last_err.expect("at least one attempt");
        if let Some(dir) = &self.quarantine_dir {
            let entry = QuarantineEntry {
                class_name: class_name.to_string(),
                reason: err.to_string(),
                prompt,
                responses: raw,
            };
            write_json(&quarantine_path(dir, class_name), &entry)?;
        }
        Err(err)
    }

    /// Full corpus for `class_names`. Attributes are requested unless given.
    ///
    /// Classes run concurrently up to the endpoint's `max_in_flight`. A class
    /// whose responses stay malformed is quarantined and skipped; any other
    /// error stops the run. Rerunning with the same cache re-sends nothing
    /// that already succeeded.
    pub fn generate(
        &self,
        dataset_id: &str,
        class_names: &[String],
        attributes: Option<Vec<String>>,
    ) -> Result<GenerationOutcome> {
        let mut corpus = VdtCorpus::new(dataset_id, self.client.config().model_id.clone());
        corpus.attribute_list = match attributes {
            Some(a) => a,
            None => {
                let (a, record) = self.request_attributes(class_names)?;
                corpus.provenance.record(record);
                a
            }
        };
        let attrs = &corpus.attribute_list;
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<(Vec<String>, ResponseRecord, bool)>>>> =
            Mutex::new((0..class_names.len()).map(|_| None).collect());
        let workers = self.client.config().max_in_flight.clamp(1, class_names.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= class_names.len() {
                        break;
                    }
                    let r = self.class_vdt(&class_names[i], attrs);
                    let fatal = matches!(&r, Err(e) if !matches!(e, Error::MalformedResponse { .. }));
                    results.lock().unwrap()[i] = Some(r);
                    if fatal {
                        next.store(class_names.len(), Ordering::Relaxed);
                    }
                });
            }
        });
        let mut quarantined = Vec::new();
        let mut cached = Vec::new();
        for (name, r) in class_names.iter().zip(results.into_inner().unwrap()) {
            match r {
                None => {}
                Some(Ok((sentences, record, hit))) => {
                    if hit {
                        cached.push(name.clone());
                    }
                    corpus.classes.insert(name.clone(), sentences);
                    corpus.provenance.record(record);
                }
                Some(Err(Error::MalformedResponse { .. })) => quarantined.push(name.clone()),
                Some(Err(e)) => return Err(e),
            }
        }
        Ok(GenerationOutcome {
            corpus,
            quarantined,
            cached,
        })
    }
}

/// `<dir>/<sanitized class name>.json`.
pub fn quarantine_path(dir: &Path, class_name: &str) -> PathBuf {
    let safe: String = class_name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    dir.join(format!("{safe}.json"))
}
