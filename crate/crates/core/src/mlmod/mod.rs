//! Random-forest and feed-forward network regressors.

mod forest;
mod mlp;

pub use forest::{
    default_n_tree_grid, rf_grid_search, rf_predict, rf_train, GridCell, GridSearch, MTry, Node,
    RfConfig, RfModel, Tree,
};
pub use mlp::{mlp_gradient_check, mlp_predict, mlp_train, Activation, Dense, MlpConfig, MlpModel};

use serde::Serialize;

use crate::error::{Error, Result};

impl<T: crate::Scalar + Serialize> RfModel<T> {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&mlp::ModelDump {
            format_version: crate::FORMAT_VERSION,
            kind: "random_forest",
            model: self,
        })
        .map_err(|e| Error::Json {
            context: "forest model".into(),
            source: e,
        })
    }
}
