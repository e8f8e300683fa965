//! Versioned on-disk form of fitted models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Scaling;
use crate::error::{Error, Result};
use crate::hierarchy::{HierEstimator, HierFit, Hierarchy, NodeRecord};
use crate::shape::{AdditiveModel, CombinationConfig, CombinationModel, Effect, OnlineConfig, OnlineModel};
use crate::solver::FitDiagnostics;
use crate::{CVector, C64};

pub const FORMAT_VERSION: u32 = 1;

/// Coefficients as `[re, im]` pairs.
pub type Coefficients = Vec<[f64; 2]>;

pub fn encode(theta: &CVector) -> Coefficients {
    theta.iter().map(|z| [z.re, z.im]).collect()
}

pub fn decode(theta: &[[f64; 2]]) -> CVector {
    CVector::from_iterator(theta.len(), theta.iter().map(|p| C64::new(p[0], p[1])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelKind {
    Additive {
        effects: Vec<Effect>,
    },
    Online {
        base_effects: Vec<Effect>,
        base_theta: Coefficients,
        config: OnlineConfig,
    },
    Combination {
        config: CombinationConfig,
        /// Columns holding the expert forecasts.
        experts: Vec<String>,
    },
    Hierarchical {
        estimator: HierEstimator,
        hierarchy: Vec<NodeRecord>,
        node_effects: Vec<Vec<Effect>>,
        offsets: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub version: u32,
    pub kind: ModelKind,
    pub theta: Coefficients,
    /// Train-fitted feature transforms; new data must pass through them.
    pub scaling: Option<Scaling>,
    pub targets: Vec<String>,
    pub diagnostics: FitDiagnostics,
}

impl FittedModel {
    fn new(kind: ModelKind, theta: &CVector, diagnostics: &FitDiagnostics, scaling: Option<Scaling>, targets: Vec<String>) -> Self {
        FittedModel {
            version: FORMAT_VERSION,
            kind,
            theta: encode(theta),
            scaling,
            targets,
            diagnostics: diagnostics.clone(),
        }
    }

    pub fn from_additive(model: &AdditiveModel, scaling: Option<Scaling>, targets: Vec<String>) -> Self {
        let kind = ModelKind::Additive { effects: model.effects.clone() };
        Self::new(kind, &model.theta, &model.diagnostics, scaling, targets)
    }

    pub fn from_online(base: &AdditiveModel, model: &OnlineModel, scaling: Option<Scaling>, targets: Vec<String>) -> Self {
        let kind = ModelKind::Online {
            base_effects: base.effects.clone(),
            base_theta: encode(&base.theta),
            config: model.config.clone(),
        };
        Self::new(kind, &model.theta, &model.diagnostics, scaling, targets)
    }

    pub fn from_combination(model: &CombinationModel, experts: Vec<String>, scaling: Option<Scaling>, targets: Vec<String>) -> Self {
        let kind = ModelKind::Combination { config: model.config.clone(), experts };
        Self::new(kind, &model.theta, &model.diagnostics, scaling, targets)
    }

    pub fn from_hierarchical(fit: &HierFit, hierarchy: &Hierarchy, scaling: Option<Scaling>) -> Self {
        let kind = ModelKind::Hierarchical {
            estimator: fit.estimator,
            hierarchy: hierarchy.records(),
            node_effects: fit.node_effects.clone(),
            offsets: fit.offsets.clone(),
        };
        Self::new(kind, &fit.theta, &fit.diagnostics, scaling, hierarchy.labels().to_vec())
    }

    pub fn coefficients(&self) -> CVector {
        decode(&self.theta)
    }

    pub fn family_name(&self) -> &'static str {
        match &self.kind {
            ModelKind::Additive { .. } => "additive",
            ModelKind::Online { .. } => "online",
            ModelKind::Combination { .. } => "combination",
            ModelKind::Hierarchical { estimator, .. } => match estimator {
                HierEstimator::Bu => "hier-bu",
                HierEstimator::G => "hier-g",
                HierEstimator::T => "hier-t",
            },
        }
    }

    pub fn to_additive(&self) -> Result<AdditiveModel> {
        match &self.kind {
            ModelKind::Additive { effects } => {
                let mut m = AdditiveModel::from_parts(effects.clone(), self.coefficients())?;
                m.diagnostics = self.diagnostics.clone();
                Ok(m)
            }
            _ => Err(self.wrong("additive")),
        }
    }

    pub fn to_online(&self) -> Result<(AdditiveModel, OnlineModel)> {
        match &self.kind {
            ModelKind::Online { base_effects, base_theta, config } => {
                let base = AdditiveModel::from_parts(base_effects.clone(), decode(base_theta))?;
                let theta = self.coefficients();
                if theta.len() != config.dim() {
                    return Err(Error::shape(format!("{} coefficients", config.dim()), theta.len()));
                }
                let online = OnlineModel {
                    config: config.clone(),
                    theta,
                    diagnostics: self.diagnostics.clone(),
                };
                Ok((base, online))
            }
            _ => Err(self.wrong("online")),
        }
    }

    pub fn to_combination(&self) -> Result<(CombinationModel, Vec<String>)> {
        match &self.kind {
            ModelKind::Combination { config, experts } => Ok((
                CombinationModel {
                    config: config.clone(),
                    theta: self.coefficients(),
                    diagnostics: self.diagnostics.clone(),
                },
                experts.clone(),
            )),
            _ => Err(self.wrong("combination")),
        }
    }

    pub fn to_hierarchical(&self) -> Result<(HierFit, Hierarchy)> {
        match &self.kind {
            ModelKind::Hierarchical { estimator, hierarchy, node_effects, offsets } => Ok((
                HierFit {
                    estimator: *estimator,
                    node_effects: node_effects.clone(),
                    offsets: offsets.clone(),
                    theta: self.coefficients(),
                    diagnostics: self.diagnostics.clone(),
                },
                Hierarchy::from_records(hierarchy)?,
            )),
            _ => Err(self.wrong("hierarchical")),
        }
    }

    fn wrong(&self, want: &str) -> Error {
        Error::Config(format!("model file holds a {} model, not {want}", self.family_name()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "model format version {} is not supported (expected {FORMAT_VERSION})",
                header.version
            )));
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
