//! Visual description text: LLM prompting, response parsing and prompt assembly.

pub mod cache;
pub mod client;
pub mod corpus;
pub mod generate;
pub mod parser;
pub mod prompts;

pub use cache::{request_key, sha256_hex, CachedResponse, ResponseCache};
pub use client::{ChatMessage, ChatTransport, Completion, HttpReply, HttpTransport, LlmClient, LlmEndpointConfig};
pub use corpus::{Provenance, ResponseRecord, VdtCorpus};
pub use generate::{quarantine_path, select_class_sentences, GenerationOutcome, QuarantineEntry, VdtGenerator};
pub use parser::{parse_vdt_response, serialize_vdt_mapping, VdtMapping};
pub use prompts::{
    assemble_default_prompts, assemble_prompts, attribute_name, parse_attribute_lines, ClassPrompts,
    PromptManifest, PromptTemplates,
};
