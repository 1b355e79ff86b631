use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::features::FeatureWidths;
use crate::graph::DEFAULT_EPSILON;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GnnKind {
    /// `H' = sigma(A_hat H W)` with the symmetric self-loop normalization.
    DegreeNormalizedConv,
    /// Neighbourhood-softmax attention over `W h`.
    Attention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    Lstm,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoGraph,
    InstanceOnly,
    WeightOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::NoGraph,
        Ablation::InstanceOnly,
        Ablation::WeightOnly,
        Ablation::Full,
    ];

    /// Row label used in ablation reports.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::NoGraph => "No Graph",
            Ablation::InstanceOnly => "Only Instance Graph",
            Ablation::WeightOnly => "Only Weight Graph",
            Ablation::Full => "Full Model",
        }
    }

    pub fn uses_weight_graph(self) -> bool {
        matches!(self, Ablation::Full | Ablation::WeightOnly)
    }

    pub fn uses_instance_graph(self) -> bool {
        matches!(self, Ablation::Full | Ablation::InstanceOnly)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_segments: usize,
    pub n_instances: usize,
    /// Node representation width.
    pub d: usize,
    pub epsilon: f64,
    pub gnn_kind: GnnKind,
    pub gnn_layers: usize,
    pub gnn_hidden: usize,
    pub attention_slope: f64,
    pub weight_head_hidden: usize,
    pub classifier_hidden: usize,
    pub projection_visual_audio: ProjectionKind,
    pub ablation: Ablation,
    /// Inverted dropout on the classification feature during training.
    pub dropout: f64,
    pub widths: FeatureWidths,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_segments: 20,
            n_instances: 10,
            d: 128,
            epsilon: DEFAULT_EPSILON,
            gnn_kind: GnnKind::Attention,
            gnn_layers: 2,
            gnn_hidden: 128,
            attention_slope: 0.2,
            weight_head_hidden: 64,
            classifier_hidden: 128,
            projection_visual_audio: ProjectionKind::Lstm,
            ablation: Ablation::Full,
            dropout: 0.0,
            widths: FeatureWidths::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.n_segments == 0 || self.n_instances == 0 {
            return bad("n_segments and n_instances must be positive".into());
        }
        if !self.n_segments.is_multiple_of(self.n_instances) {
            return bad(format!(
                "n_instances ({}) must divide n_segments ({})",
                self.n_instances, self.n_segments
            ));
        }
        if self.d == 0 || self.gnn_hidden == 0 || self.weight_head_hidden == 0 || self.classifier_hidden == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.gnn_layers == 0 {
            return bad("gnn_layers must be at least 1".into());
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be a finite non-negative number, got {}", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.widths.visual == 0 || self.widths.audio == 0 || self.widths.text == 0 {
            return bad("raw feature widths must be positive".into());
        }
        Ok(())
    }

    /// `(in, out)` widths of each GNN layer; the last layer maps back to `d`.
    pub fn gnn_dims(&self) -> Vec<(usize, usize)> {
        (0..self.gnn_layers)
            .map(|l| {
                let input = if l == 0 { self.d } else { self.gnn_hidden };
                let output = if l + 1 == self.gnn_layers { self.d } else { self.gnn_hidden };
                (input, output)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!((c.n_segments, c.n_instances, c.d), (20, 10, 128));
    }

    #[test]
    fn indivisible_k_rejected() {
        let c = ModelConfig {
            n_segments: 10,
            n_instances: 4,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(ModelError::Config(_))));
    }

    #[test]
    fn gnn_dims_chain() {
        let c = ModelConfig {
            d: 8,
            gnn_hidden: 5,
            gnn_layers: 3,
            ..Default::default()
        };
        assert_eq!(c.gnn_dims(), vec![(8, 5), (5, 5), (5, 8)]);
    }

    #[test]
    fn json_rejects_unknown_keys() {
        assert!(serde_json::from_str::<ModelConfig>(r#"{"d": 4, "bogus": 1}"#).is_err());
        let c: ModelConfig = serde_json::from_str(r#"{"d": 4, "gnn_kind": "degree-normalized-conv", "ablation": "no_graph"}"#).unwrap();
        assert_eq!(c.gnn_kind, GnnKind::DegreeNormalizedConv);
        assert_eq!(c.ablation, Ablation::NoGraph);
    }
}
