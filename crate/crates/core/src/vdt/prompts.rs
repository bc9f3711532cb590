//! Prompt templates for the two-step generation and for classifier prompts.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::corpus::VdtCorpus;
use crate::error::{Error, Result};

/// Templates with `{placeholder}` slots.
///
/// * `attribute_prompt`: `{entity}`, `{num_attributes}`, `{classes}`
/// * `description_prompt`: `{entity}`, `{class_name}`, `{key_hint}`, `{attributes}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub system_prompt: String,
    pub attribute_prompt: String,
    pub description_prompt: String,
    /// Plural description of the dataset's images, e.g. "aircrafts".
    pub entity_plural: String,
    /// Singular noun for one class, e.g. "aircraft".
    pub entity: String,
    /// What the mapping key should be, e.g. "aircraft variant".
    pub key_hint: String,
    pub num_attributes: usize,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            system_prompt: "You are ChatGPT, a large language model trained by OpenAI. \
                            Return only the python dictionary, with no explanation."
                .into(),
            attribute_prompt: "I am creating class attributes for a zero-shot image recognition \
                               algorithm to classify different images of a diverse set of \
                               {entity_plural}. The attributes are part of side information about \
                               the classes. List {num_attributes} attributes that can form part of a \
                               description of the class that will aid in distinguishing between \
                               the following list of classes visually:\n{classes}"
                .into(),
            description_prompt: "Describe the following {entity} by adding one sentence about each \
                                 attribute for the following {entity}: {class_name}. Return the \
                                 answer as a python dictionary with the {key_hint} as the key and \
                                 the value is a list of sentences. Rewrite the attribute as a full \
                                 sentence. Do not include the attributes as keys. Attributes: \n\
                                 {attributes}"
                .into(),
            entity_plural: "objects".into(),
            entity: "object".into(),
            key_hint: "class name".into(),
            num_attributes: 20,
        }
    }
}

fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// `['a', 'b', ...]`, the way a Python list of class names prints.
pub fn format_class_list(class_names: &[String]) -> String {
    let items: Vec<String> = class_names
        .iter()
        .map(|c| format!("'{}'", c.replace('\'', "\\'")))
        .collect();
    format!("[{}]", items.join(", "))
}

impl PromptTemplates {
    /// Wording used for the aircraft dataset.
    pub fn fgvc_aircraft() -> Self {
        Self {
            entity_plural: "aircrafts".into(),
            entity: "aircraft".into(),
            key_hint: "aircraft variant".into(),
            description_prompt: Self::default()
                .description_prompt
                .replace("{key_hint} as the key", "{key_hint} as the key (i.e. remove the manufacturer)"),
            ..Self::default()
        }
    }

    pub fn attribute_request(&self, class_names: &[String]) -> String {
        render(
            &self.attribute_prompt,
            &[
                ("entity_plural", &self.entity_plural),
                ("num_attributes", &self.num_attributes.to_string()),
                ("classes", &format_class_list(class_names)),
            ],
        )
    }

    pub fn description_request(&self, class_name: &str, attributes: &[String]) -> String {
        render(
            &self.description_prompt,
            &[
                ("entity", &self.entity),
                ("class_name", class_name),
                ("key_hint", &self.key_hint),
                ("attributes", &attributes.join(" \n")),
            ],
        )
    }
}

/// Attribute lines from a free-text response: one per non-empty line, with
/// list markers ("1.", "-", "*") removed.
pub fn parse_attribute_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| {
            let line = line.trim();
            let line = line.trim_start_matches(['-', '*', '\u{2022}']);
            let digits = line.chars().take_while(char::is_ascii_digit).count();
            let rest = &line[digits..];
            let line = if digits > 0 && (rest.starts_with('.') || rest.starts_with(')')) {
                &rest[1..]
            } else {
                line
            };
            line.trim().to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

/// Short attribute name: the text before the first ':' of an attribute line.
pub fn attribute_name(line: &str) -> String {
    line.split(':').next().unwrap_or(line).trim().to_string()
}

pub const CLASSNAME_SLOT: &str = "{classname}";
pub const SENTENCE_SLOT: &str = "{sentence}";

/// Prompts for one class, aligned with the attribute each sentence describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrompts {
    pub prompts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<String>>,
}

/// Classifier prompts for every class, ready for the text encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptManifest {
    pub dataset_id: String,
    pub template: String,
    pub classes: IndexMap<String, ClassPrompts>,
}

impl PromptManifest {
    pub fn total_prompts(&self) -> usize {
        self.classes.values().map(|c| c.prompts.len()).sum()
    }
}

/// One prompt per (class, sentence); empty sentences are dropped with a warning.
pub fn assemble_prompts(template: &str, corpus: &VdtCorpus) -> Result<PromptManifest> {
    if !template.contains(CLASSNAME_SLOT) || !template.contains(SENTENCE_SLOT) {
        return Err(Error::BadTemplate(format!(
            "template {template:?} needs both {CLASSNAME_SLOT} and {SENTENCE_SLOT}"
        )));
    }
    let names: Vec<String> = corpus.attribute_list.iter().map(|a| attribute_name(a)).collect();
    let mut classes = IndexMap::new();
    for (class_name, sentences) in &corpus.classes {
        let aligned = sentences.len() == names.len();
        let mut prompts = Vec::new();
        let mut attributes = Vec::new();
        for (i, sentence) in sentences.iter().enumerate() {
            let sentence = sentence.trim();
            if sentence.is_empty() {
                log::warn!("skipping empty sentence {i} of class {class_name:?}");
                continue;
            }
            prompts.push(
                template
                    .replace(CLASSNAME_SLOT, class_name)
                    .replace(SENTENCE_SLOT, sentence),
            );
            if aligned {
                attributes.push(names[i].clone());
            }
        }
        classes.insert(
            class_name.clone(),
            ClassPrompts {
                prompts,
                attributes: aligned.then_some(attributes),
            },
        );
    }
    Ok(PromptManifest {
        dataset_id: corpus.dataset_id.clone(),
        template: template.to_string(),
        classes,
    })
}

/// One prompt per class from a template with only a `{classname}` slot.
pub fn assemble_default_prompts(template: &str, dataset_id: &str, class_names: &[String]) -> Result<PromptManifest> {
    if !template.contains(CLASSNAME_SLOT) {
        return Err(Error::BadTemplate(format!("template {template:?} needs {CLASSNAME_SLOT}")));
    }
    let classes = class_names
        .iter()
        .map(|c| {
            (
                c.clone(),
                ClassPrompts {
                    prompts: vec![template.replace(CLASSNAME_SLOT, c)],
                    attributes: None,
                },
            )
        })
        .collect();
    Ok(PromptManifest {
        dataset_id: dataset_id.to_string(),
        template: template.to_string(),
        classes,
    })
}
