use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SHIPPED: &str = include_str!("../../assets/prompts.yaml");

/// Template file: `{color}`, `{style}` and `{object}` are substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplates {
    pub object: String,
    pub colors: Vec<String>,
    pub styles: Vec<String>,
    pub appearance_templates: Vec<String>,
    pub shape_templates: Vec<String>,
}

/// One instantiated prompt and the attribute it names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub attribute: String,
}

/// Instantiated prompts per edit channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLibrary {
    pub appearance: Vec<Prompt>,
    pub shape: Vec<Prompt>,
}

impl PromptTemplates {
    pub fn shipped() -> Self {
        serde_yaml::from_str(SHIPPED).expect("shipped prompt library parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_yaml::from_str(&text).map_err(|e| Error::ConfigParse(format!("{}: {e}", path.display())))
    }

    pub fn expand(&self) -> PromptLibrary {
        let fill = |t: &str, key: &str, value: &str| t.replace(key, value).replace("{object}", &self.object);
        let appearance = self
            .appearance_templates
            .iter()
            .flat_map(|t| self.colors.iter().map(move |c| Prompt { text: fill(t, "{color}", c), attribute: c.clone() }))
            .collect();
        let shape = self
            .shape_templates
            .iter()
            .flat_map(|t| self.styles.iter().map(move |s| Prompt { text: fill(t, "{style}", s), attribute: s.clone() }))
            .collect();
        PromptLibrary { appearance, shape }
    }
}

impl PromptLibrary {
    pub fn shipped() -> Self {
        PromptTemplates::shipped().expand()
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let lib = match path {
            Some(p) => PromptTemplates::load(p)?.expand(),
            None => Self::shipped(),
        };
        lib.check()?;
        Ok(lib)
    }

    pub fn check(&self) -> Result<()> {
        if self.appearance.is_empty() && self.shape.is_empty() {
            return Err(Error::invalid("prompt library is empty"));
        }
        Ok(())
    }

    pub fn sample_appearance(&self, rng: &mut impl Rng) -> Option<&Prompt> {
        self.appearance.choose(rng)
    }

    pub fn sample_shape(&self, rng: &mut impl Rng) -> Option<&Prompt> {
        self.shape.choose(rng)
    }
}
