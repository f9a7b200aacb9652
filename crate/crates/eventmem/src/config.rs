//! Pricing files and prompt template directories.
//!
//! Pricing is TOML, prices per million tokens:
//!
//! ```toml
//! [models.gpt-4o-mini]
//! input = "0.15"
//! output = "0.60"
//!
//! [models.gpt-5]
//! input = "1.25"
//! output = "10.00"
//!
//! [stages]
//! memory_construction = "gpt-4o-mini"
//! retrieval = "gpt-4o-mini"
//! answer = "gpt-5"
//! ```
//!
//! A template directory holds `<family key>.txt` files (for example
//! `final_qa_temporal.txt`); families without a file keep the built-in text.

use std::path::{Path, PathBuf};

use eventmem_core::gateway::{Pricing, PricingError, PromptTemplates, TemplateError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad pricing file {path}: {message}")]
    Pricing { path: PathBuf, message: String },
    #[error("pricing file {path}: {source}")]
    PricingRule { path: PathBuf, source: PricingError },
    #[error("template {path}: {source}")]
    Template { path: PathBuf, source: TemplateError },
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })
}

pub fn parse_pricing(text: &str) -> Result<Pricing, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

pub fn load_pricing(path: &Path) -> Result<Pricing, ConfigError> {
    let pricing = parse_pricing(&read(path)?).map_err(|message| ConfigError::Pricing { path: path.to_owned(), message })?;
    pricing.validate().map_err(|source| ConfigError::PricingRule { path: path.to_owned(), source })?;
    Ok(pricing)
}

/// Built-in templates overridden by any `<key>.txt` in `dir`. Other files
/// with a `.txt` extension are rejected so typos do not pass silently.
pub fn load_templates(dir: &Path) -> Result<PromptTemplates, ConfigError> {
    let mut templates = PromptTemplates::default();
    let entries = std::fs::read_dir(dir).map_err(|source| ConfigError::Io { path: dir.to_owned(), source })?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for path in paths.into_iter().filter(|p| p.extension().is_some_and(|e| e == "txt")) {
        let key = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let text = read(&path)?;
        templates.set(&key, text).map_err(|source| ConfigError::Template { path: path.clone(), source })?;
    }
    Ok(templates)
}
