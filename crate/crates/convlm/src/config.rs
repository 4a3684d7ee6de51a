//! Run configuration: one document with a section per subsystem, read from
//! a JSON file with unknown keys rejected, overridden by CLI flags, and
//! echoed (defaults merged) into every output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rescoring::RescoreOptions;
use crate::training::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Dialogue-act prefix augmentation for user turns.
    pub da_enabled: bool,
    /// Vocabulary size cap handed to the builder.
    pub vocab_size: usize,
    pub synth: SynthConfig,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            da_enabled: false,
            vocab_size: 2000,
            synth: SynthConfig::two_domain_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Path to a stop-word list; the shipped default is used when absent.
    pub stopwords_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingsSection {
    /// Derive pseudo embeddings from the training corpus.
    pub pseudo: bool,
    /// Embedding file to load instead.
    pub file: Option<PathBuf>,
    /// Dimension for pseudo embeddings (must match fusion.d_embed).
    pub d_embed: usize,
}

impl Default for EmbeddingsSection {
    fn default() -> Self {
        EmbeddingsSection {
            pseudo: false,
            file: None,
            d_embed: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Top-level seed: corpus generation, model init, training order,
    /// dropout and synthetic acoustics all derive from it.
    pub seed: u64,
    pub corpus: CorpusSection,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub rescoring: RescoreOptions,
    pub evaluation: EvaluationSection,
    pub embeddings: EmbeddingsSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    /// Defaults-merged config serialized for the output-directory echo.
    pub fn echo(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}
