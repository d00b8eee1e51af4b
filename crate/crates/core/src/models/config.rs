//! Model configuration as read from and echoed to JSON.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::models::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gcn,
    Gin,
    Sage,
    Pna,
    Sgc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Vanilla,
    Expander,
    ActivationOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Prelu,
    Tanh,
}

impl Activation {
    /// Preference order used to break ties in activation sweeps.
    pub const ALL: [Activation; 3] = [Activation::Relu, Activation::Prelu, Activation::Tanh];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    #[default]
    Linear,
    Mlp3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    #[default]
    NodeClass,
    GraphClass,
    GraphReg,
}

impl Task {
    pub fn is_graph_level(self) -> bool {
        !matches!(self, Task::NodeClass)
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, Task::GraphReg)
    }
}

macro_rules! text_enum {
    ($ty:ident { $($name:literal => $v:ident),* $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$v => $name),* }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($ty::$v),)*
                    _ => Err(format!(
                        "unknown {} '{}' (expected one of: {})",
                        stringify!($ty).to_lowercase(),
                        s,
                        [$($name),*].join(", ")
                    )),
                }
            }
        }
    };
}

text_enum!(Family { "gcn" => Gcn, "gin" => Gin, "sage" => Sage, "pna" => Pna, "sgc" => Sgc });
text_enum!(Variant { "vanilla" => Vanilla, "expander" => Expander, "activation-only" => ActivationOnly });
text_enum!(Activation { "relu" => Relu, "prelu" => Prelu, "tanh" => Tanh });
text_enum!(HeadKind { "linear" => Linear, "mlp3" => Mlp3 });
text_enum!(Task { "node-class" => NodeClass, "graph-class" => GraphClass, "graph-reg" => GraphReg });

fn default_true() -> bool {
    true
}

/// Everything needed to build a model apart from the input width.
///
/// For `sgc`, `layers` is the propagation power K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    pub layers: usize,
    pub hidden: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[serde(default)]
    pub head: HeadKind,
    #[serde(default)]
    pub task: Task,
    pub output_dim: usize,
    #[serde(default)]
    pub use_initial_embedding: bool,
    #[serde(default)]
    pub batchnorm: bool,
    /// Self-loops in the GCN/SGC propagation operator.
    #[serde(default = "default_true")]
    pub self_loops: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(family: Family, variant: Variant, layers: usize, hidden: usize, output_dim: usize) -> Self {
        Self {
            family,
            variant,
            density: None,
            layers,
            hidden,
            activation: None,
            head: HeadKind::Linear,
            task: Task::NodeClass,
            output_dim,
            use_initial_embedding: false,
            batchnorm: false,
            self_loops: true,
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn activation(&self) -> Activation {
        self.activation.unwrap_or_default()
    }

    /// Whether an embedding layer is actually built; activation-only models
    /// never have one.
    pub fn has_embedding(&self) -> bool {
        self.use_initial_embedding && self.variant != Variant::ActivationOnly && self.family != Family::Sgc
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden width must be at least 1".into());
        }
        if self.output_dim == 0 {
            return bad("output_dim must be at least 1".into());
        }
        if self.task == Task::GraphReg && self.output_dim != 1 {
            return bad("graph-reg needs output_dim 1".into());
        }
        match (self.variant, self.density) {
            (Variant::Expander, None) => return bad("variant expander requires a density".into()),
            (Variant::Expander, Some(d)) if !(d > 0.0 && d <= 1.0) => {
                return bad(format!("density must lie in (0, 1], got {d}"))
            }
            (v, Some(_)) if v != Variant::Expander => {
                return bad(format!("density is only meaningful for variant expander, not {v}"))
            }
            _ => {}
        }
        if self.family == Family::Sgc {
            if self.variant != Variant::Vanilla {
                return bad("sgc admits no variant".into());
            }
            if self.activation.is_some() {
                return bad("sgc admits no activation".into());
            }
            if self.task != Task::NodeClass {
                return bad("sgc supports node-class only".into());
            }
            if self.head != HeadKind::Linear {
                return bad("sgc uses the linear head".into());
            }
            if self.batchnorm || self.use_initial_embedding {
                return bad("sgc has no embedding or batchnorm".into());
            }
        }
        if self.head == HeadKind::Mlp3 && self.variant != Variant::ActivationOnly && !self.hidden.is_multiple_of(4) {
            return bad(format!("mlp3 head needs hidden divisible by 4, got {}", self.hidden));
        }
        Ok(())
    }

    /// The same configuration with dense Update steps.
    pub fn vanilla_twin(&self) -> Self {
        let mut twin = self.clone();
        twin.density = None;
        if self.family == Family::Sgc {
            twin.family = Family::Gcn;
            twin.activation = Some(Activation::Relu);
        }
        twin.variant = Variant::Vanilla;
        twin
    }
}
