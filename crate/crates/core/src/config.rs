//! TOML run configuration.
//!
//! Every section is optional and falls back to the defaults:
//!
//! ```toml
//! [model]
//! embedding_dim = 32
//! heads = 4
//! encoder_layers = 1
//! decoder_layers = 1
//! final_decoder_layers = 2
//! activation = "relu"        # relu | leakyrelu | gelu | sigmoid | tanh
//! invariant = "max"          # max | min | sum | mean
//! dropout = 0.0
//!
//! [groups]
//! left_eye = [36, 37, 38, 39, 40, 41]
//! right_eye = [42, 43, 44, 45, 46, 47]
//! left_cheek = [1, 2, 3, 4, 5]
//! right_cheek = [11, 12, 13, 14, 15]
//! chin = [6, 7, 8, 9, 10]
//!
//! [hybrid]
//! conv_blocks = 3
//! conv_channels = 16
//! kernel = 5
//! fc_widths = [32, 16]
//! fusion_layers = 1
//!
//! [train]
//! epochs = 150
//! batch_size = 256
//! loss = "mae"               # mae | mse
//!
//! [train.schedule]
//! base_lr = 0.001
//! milestones = [60, 120]
//! gamma = 0.01
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::HybridConfig;
use crate::model::GadsConfig;
use crate::preprocess::GroupSpec;
use crate::training::{TrainConfig, TrainSetup};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    model: GadsConfig,
    groups: GroupSpec,
    hybrid: HybridConfig,
    train: TrainConfig,
}

/// Reads a TOML config file into a full training setup.
pub fn load_config(path: &Path) -> Result<TrainSetup> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<TrainSetup> {
    let file: FileConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
    let setup = TrainSetup {
        gads: file.model,
        hybrid: file.hybrid,
        groups: file.groups,
        train: file.train,
    };
    setup.gads.validate()?;
    setup.hybrid.validate()?;
    setup.groups.validate(crate::preprocess::DEFAULT_REFERENCE)?;
    setup.train.validate()?;
    Ok(setup)
}
