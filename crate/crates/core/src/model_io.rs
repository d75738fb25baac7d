//! Versioned JSON serialization of fitted models.
//!
//! Kernel and location models share one envelope so the CLI can save and load
//! any fitted test uniformly. Numbers round-trip exactly: serde_json emits
//! shortest-representation floats that parse back to identical bits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::TestId;
use crate::error::{Error, Result};
use crate::inference::{FittedKind, FittedTest};
use crate::kernels::KernelModel;
use crate::location::LocationTestModel;
use crate::mmd::CriterionConfig;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedModel {
    Kernel {
        model: KernelModel,
        criterion: CriterionConfig,
    },
    Location {
        model: LocationTestModel,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub method: TestId,
    #[serde(flatten)]
    pub model: SavedModel,
}

impl ModelFile {
    pub fn from_fitted(test: &FittedTest) -> Self {
        let model = match &test.kind {
            FittedKind::Mmd { model, criterion } => SavedModel::Kernel {
                model: model.clone(),
                criterion: *criterion,
            },
            FittedKind::Location { model } => SavedModel::Location {
                model: model.clone(),
            },
        };
        ModelFile {
            format: "tst-model".into(),
            version: MODEL_FORMAT_VERSION,
            method: test.id,
            model,
        }
    }

    pub fn into_fitted(self) -> FittedTest {
        let kind = match self.model {
            SavedModel::Kernel { model, criterion } => FittedKind::Mmd { model, criterion },
            SavedModel::Location { model } => FittedKind::Location { model },
        };
        FittedTest {
            id: self.method,
            kind,
        }
    }
}

pub fn save_model(test: &FittedTest, path: &Path) -> Result<()> {
    let file = ModelFile::from_fitted(test);
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FittedTest> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.format != "tst-model" {
        return Err(Error::config(format!(
            "{} is not a model file (format '{}')",
            path.display(),
            file.format
        )));
    }
    if file.version != MODEL_FORMAT_VERSION {
        return Err(Error::config(format!(
            "unsupported model format version {}",
            file.version
        )));
    }
    Ok(file.into_fitted())
}
