//! Prompt templates and the catalog they are loaded from.
//!
//! Templates live in a TOML catalog file so prompt iteration (wording,
//! few-shot examples) never touches engine code. Rendering is a single pass:
//! bound text is inserted verbatim and never re-scanned, so a binding that
//! happens to contain `{...}` cannot inject further expansion.

use std::collections::{BTreeMap, HashMap};

use serde::Deserialize;
use thiserror::Error;

/// The default catalog shipped with the crate.
pub const DEFAULT_CATALOG: &str = include_str!("../../prompts/catalog.toml");

/// Template identifiers used by the pipeline stages.
pub mod ids {
    pub const MAP_CONTEXT: &str = "map_context";
    pub const SSID_CONTEXT: &str = "ssid_context";
    pub const LOCATION_FUSION: &str = "location_fusion";
    pub const MOTION_CALIBRATION: &str = "motion_calibration";
    pub const JOURNAL_GENERATION: &str = "journal_generation";
    pub const JOURNAL_CLEANING: &str = "journal_cleaning";
    pub const BASELINE_JOURNAL: &str = "baseline_journal";
}

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template {template}: placeholder {{{name}}} is unbound")]
    UnboundPlaceholder { template: String, name: String },
    #[error("template {template}: unterminated placeholder")]
    Unterminated { template: String },
    #[error("unknown template id {0}")]
    UnknownTemplate(String),
    #[error("catalog parse error: {0}")]
    Catalog(String),
    #[error("template {0} does not demand the reasoning/summary response format")]
    MissingResponseSchema(String),
}

/// One prompt template: a body with `{name}` placeholders, plus whether the
/// call must carry an image.
#[derive(Debug, Clone, Deserialize)]
pub struct PromptTemplate {
    #[serde(default)]
    pub id: String,
    pub body: String,
    #[serde(default)]
    pub expects_image: bool,
}

impl PromptTemplate {
    /// Substitutes bindings into the body. `{{` and `}}` escape literal
    /// braces; every `{name}` must be bound.
    pub fn render(&self, bindings: &HashMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len());
        let mut chars = self.body.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    out.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    out.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(c) => name.push(c),
                            None => {
                                return Err(TemplateError::Unterminated {
                                    template: self.id.clone(),
                                })
                            }
                        }
                    }
                    match bindings.get(name.as_str()) {
                        Some(value) => out.push_str(value),
                        None => {
                            return Err(TemplateError::UnboundPlaceholder {
                                template: self.id.clone(),
                                name,
                            })
                        }
                    }
                }
                c => out.push(c),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Deserialize)]
struct CatalogFile {
    templates: BTreeMap<String, PromptTemplate>,
}

/// A named set of prompt templates.
#[derive(Debug, Clone)]
pub struct PromptCatalog {
    templates: BTreeMap<String, PromptTemplate>,
}

impl PromptCatalog {
    /// Parses a TOML catalog. Every template must demand the reasoning /
    /// summary response sections; responses that omit them are treated as
    /// hallucinations downstream, so a template without the demand would make
    /// every call fail.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let file: CatalogFile =
            toml::from_str(text).map_err(|e| TemplateError::Catalog(e.to_string()))?;
        let mut templates = BTreeMap::new();
        for (id, mut template) in file.templates {
            template.id = id.clone();
            let lower = template.body.to_lowercase();
            if !(lower.contains("reasoning") && lower.contains("summary")) {
                return Err(TemplateError::MissingResponseSchema(id));
            }
            templates.insert(id, template);
        }
        Ok(PromptCatalog { templates })
    }

    pub fn default_catalog() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("bundled catalog must parse")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::Catalog(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(id)
            .ok_or_else(|| TemplateError::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template(body: &str) -> PromptTemplate {
        PromptTemplate {
            id: "t".into(),
            body: body.into(),
            expects_image: false,
        }
    }

    fn bind(pairs: &[(&'static str, &str)]) -> HashMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn render_substitutes_bindings() {
        let t = template("SSIDs: {list}");
        assert_eq!(t.render(&bind(&[("list", "a, b")])).unwrap(), "SSIDs: a, b");
    }

    #[test]
    fn render_rejects_unbound() {
        let t = template("SSIDs: {list}");
        assert_eq!(
            t.render(&HashMap::new()),
            Err(TemplateError::UnboundPlaceholder {
                template: "t".into(),
                name: "list".into()
            })
        );
    }

    #[test]
    fn bindings_are_not_re_expanded() {
        // Adversarial binding carrying placeholder syntax stays verbatim.
        let t = template("note: {text}");
        let rendered = t
            .render(&bind(&[("text", "see {other} and {text}")]))
            .unwrap();
        assert_eq!(rendered, "note: see {other} and {text}");
    }

    #[test]
    fn doubled_braces_escape() {
        let t = template("literal {{x}} and {y}");
        assert_eq!(t.render(&bind(&[("y", "z")])).unwrap(), "literal {x} and z");
    }

    #[test]
    fn bundled_catalog_parses_with_expected_ids() {
        let catalog = PromptCatalog::default_catalog();
        for id in [
            ids::MAP_CONTEXT,
            ids::SSID_CONTEXT,
            ids::LOCATION_FUSION,
            ids::MOTION_CALIBRATION,
            ids::JOURNAL_GENERATION,
            ids::JOURNAL_CLEANING,
            ids::BASELINE_JOURNAL,
        ] {
            let t = catalog.get(id).unwrap();
            assert_eq!(t.id, id);
        }
        assert!(catalog.get(ids::MAP_CONTEXT).unwrap().expects_image);
        assert!(!catalog.get(ids::SSID_CONTEXT).unwrap().expects_image);
        // The batched refinement prompt must carry the concise instruction,
        // and journal generation its few-shot examples.
        assert!(catalog
            .get(ids::LOCATION_FUSION)
            .unwrap()
            .body
            .contains("concise"));
        assert!(catalog
            .get(ids::JOURNAL_GENERATION)
            .unwrap()
            .body
            .contains("Example journal entries"));
    }

    #[test]
    fn catalog_rejects_templates_without_response_schema() {
        let bad = "[templates.x]\nbody = \"just do it\"\n";
        assert!(matches!(
            PromptCatalog::parse(bad),
            Err(TemplateError::MissingResponseSchema(_))
        ));
    }
}
