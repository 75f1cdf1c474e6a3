use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Padding;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Softmax,
}

/// One entry of a declarative layer sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDescriptor {
    Conv {
        filters: usize,
        #[serde(default = "default_kernel")]
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    BatchNorm,
    MaxPool,
    Dropout {
        rate: f32,
    },
    Dense {
        units: usize,
    },
    Activation {
        function: ActivationKind,
    },
    Flatten,
    UpSample,
    GlobalAvgPool,
    ResStage {
        filters: usize,
        #[serde(default = "default_blocks")]
        blocks: usize,
        downsample: bool,
    },
}

fn default_kernel() -> usize {
    3
}

fn default_stride() -> usize {
    1
}

fn default_blocks() -> usize {
    2
}

/// Activation shape between layers, excluding the batch axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn spatial(c: usize, h: usize, w: usize) -> Self {
        Shape::Spatial { c, h, w }
    }

    pub fn numel(&self) -> usize {
        match *self {
            Shape::Spatial { c, h, w } => c * h * w,
            Shape::Flat(f) => f,
        }
    }

    /// Per-sample dims as used in tensors: `[C,H,W]` or `[F]`.
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Spatial { c, h, w } => vec![c, h, w],
            Shape::Flat(f) => vec![f],
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Spatial { c, h, w } => write!(f, "({c},{h},{w})"),
            Shape::Flat(n) => write!(f, "({n})"),
        }
    }
}

impl LayerDescriptor {
    pub fn conv(filters: usize) -> Self {
        LayerDescriptor::Conv {
            filters,
            kernel: 3,
            stride: 1,
            padding: Padding::Same,
        }
    }

    pub fn dense(units: usize) -> Self {
        LayerDescriptor::Dense { units }
    }

    pub fn dropout(rate: f32) -> Self {
        LayerDescriptor::Dropout { rate }
    }

    pub fn relu() -> Self {
        LayerDescriptor::Activation {
            function: ActivationKind::Relu,
        }
    }

    pub fn softmax() -> Self {
        LayerDescriptor::Activation {
            function: ActivationKind::Softmax,
        }
    }

    /// Parameter invariants that hold regardless of position.
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            LayerDescriptor::Conv {
                filters,
                kernel,
                stride,
                ..
            } => {
                if filters == 0 {
                    return bad("conv filters must be > 0".into());
                }
                if kernel == 0 {
                    return bad("conv kernel must be > 0".into());
                }
                if !(1..=2).contains(&stride) {
                    return bad(format!("conv stride must be 1 or 2, got {stride}"));
                }
            }
            LayerDescriptor::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                return bad(format!("dropout rate must be in [0, 1), got {rate}"));
            }
            LayerDescriptor::Dense { units: 0 } => return bad("dense units must be > 0".into()),
            LayerDescriptor::ResStage {
                filters, blocks, ..
            } if filters == 0 || blocks == 0 => {
                return bad("residual stage filters and blocks must be > 0".into());
            }
            _ => {}
        }
        Ok(())
    }

    /// The paper's abbreviation for the layer kind.
    pub fn short_token(&self) -> &'static str {
        match self {
            LayerDescriptor::Conv { .. } => "Conv",
            LayerDescriptor::BatchNorm => "BN",
            LayerDescriptor::MaxPool => "PL",
            LayerDescriptor::Dropout { .. } => "DropL",
            LayerDescriptor::Dense { .. } => "FCL",
            LayerDescriptor::Activation {
                function: ActivationKind::Softmax,
            } => "AL",
            LayerDescriptor::Activation {
                function: ActivationKind::Relu,
            } => "ReLU",
            LayerDescriptor::Flatten => "Flatten",
            LayerDescriptor::UpSample => "UpSamp",
            LayerDescriptor::GlobalAvgPool => "GAP",
            LayerDescriptor::ResStage { .. } => "Stage",
        }
    }

    /// A token that encodes every parameter; [`LayerDescriptor::parse_token`] inverts it.
    pub fn full_token(&self) -> String {
        match *self {
            LayerDescriptor::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let mut s = format!("Conv{filters}");
                if kernel != 3 {
                    s += &format!("k{kernel}");
                }
                if stride != 1 {
                    s += &format!("s{stride}");
                }
                if padding == Padding::Valid {
                    s.push('v');
                }
                s
            }
            LayerDescriptor::Dropout { rate } => format!("DropL{rate}"),
            LayerDescriptor::Dense { units } => format!("FCL{units}"),
            LayerDescriptor::ResStage {
                filters,
                blocks,
                downsample,
            } => {
                let mut s = format!("Stage{filters}");
                if blocks != 2 {
                    s += &format!("x{blocks}");
                }
                if downsample {
                    s.push('d');
                }
                s
            }
            _ => self.short_token().to_string(),
        }
    }

    pub fn parse_token(token: &str) -> Result<Self> {
        let err = || Error::Config(format!("unrecognised layer token '{token}'"));
        let fixed = [
            ("BN", LayerDescriptor::BatchNorm),
            ("PL", LayerDescriptor::MaxPool),
            ("AL", LayerDescriptor::softmax()),
            ("ReLU", LayerDescriptor::relu()),
            ("Flatten", LayerDescriptor::Flatten),
            ("UpSamp", LayerDescriptor::UpSample),
            ("GAP", LayerDescriptor::GlobalAvgPool),
        ];
        if let Some((_, d)) = fixed.iter().find(|(t, _)| *t == token) {
            return Ok(d.clone());
        }
        let layer = if let Some(rest) = token.strip_prefix("Conv") {
            let (filters, rest) = leading_number(rest).ok_or_else(err)?;
            let (kernel, rest) = match rest.strip_prefix('k') {
                Some(r) => leading_number(r).ok_or_else(err)?,
                None => (3, rest),
            };
            let (stride, rest) = match rest.strip_prefix('s') {
                Some(r) => leading_number(r).ok_or_else(err)?,
                None => (1, rest),
            };
            let padding = match rest {
                "" => Padding::Same,
                "v" => Padding::Valid,
                _ => return Err(err()),
            };
            LayerDescriptor::Conv {
                filters,
                kernel,
                stride,
                padding,
            }
        } else if let Some(rest) = token.strip_prefix("DropL") {
            let rate: f32 = rest.parse().map_err(|_| err())?;
            LayerDescriptor::Dropout { rate }
        } else if let Some(rest) = token.strip_prefix("FCL") {
            let (units, rest) = leading_number(rest).ok_or_else(err)?;
            if !rest.is_empty() {
                return Err(err());
            }
            LayerDescriptor::Dense { units }
        } else if let Some(rest) = token.strip_prefix("Stage") {
            let (filters, rest) = leading_number(rest).ok_or_else(err)?;
            let (blocks, rest) = match rest.strip_prefix('x') {
                Some(r) => leading_number(r).ok_or_else(err)?,
                None => (2, rest),
            };
            let downsample = match rest {
                "" => false,
                "d" => true,
                _ => return Err(err()),
            };
            LayerDescriptor::ResStage {
                filters,
                blocks,
                downsample,
            }
        } else {
            return Err(err());
        };
        layer.check()?;
        Ok(layer)
    }
}

fn leading_number(s: &str) -> Option<(usize, &str)> {
    let end = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let n = s[..end].parse().ok()?;
    Some((n, &s[end..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_tokens_round_trip() {
        let layers = [
            LayerDescriptor::conv(32),
            LayerDescriptor::Conv {
                filters: 8,
                kernel: 5,
                stride: 2,
                padding: Padding::Valid,
            },
            LayerDescriptor::BatchNorm,
            LayerDescriptor::MaxPool,
            LayerDescriptor::dropout(0.25),
            LayerDescriptor::dropout(0.1),
            LayerDescriptor::dense(10),
            LayerDescriptor::softmax(),
            LayerDescriptor::relu(),
            LayerDescriptor::Flatten,
            LayerDescriptor::UpSample,
            LayerDescriptor::GlobalAvgPool,
            LayerDescriptor::ResStage {
                filters: 64,
                blocks: 2,
                downsample: false,
            },
            LayerDescriptor::ResStage {
                filters: 128,
                blocks: 3,
                downsample: true,
            },
        ];
        for l in layers {
            assert_eq!(
                LayerDescriptor::parse_token(&l.full_token()).unwrap(),
                l,
                "{}",
                l.full_token()
            );
        }
    }

    #[test]
    fn malformed_tokens_are_rejected() {
        for t in [
            "", "Conv", "Convx", "FCL2x", "DropL", "DropL1.5", "Stage64q", "Conv0", "Conv32s3",
        ] {
            assert!(LayerDescriptor::parse_token(t).is_err(), "{t}");
        }
    }

    #[test]
    fn json_uses_kind_tags_and_defaults() {
        let l: LayerDescriptor = serde_json::from_str(r#"{"kind":"conv","filters":16}"#).unwrap();
        assert_eq!(l, LayerDescriptor::conv(16));
        let s = serde_json::to_string(&LayerDescriptor::softmax()).unwrap();
        assert_eq!(s, r#"{"kind":"activation","function":"softmax"}"#);
    }

    #[test]
    fn parameter_invariants() {
        assert!(LayerDescriptor::dense(0).check().is_err());
        assert!(LayerDescriptor::dropout(1.0).check().is_err());
        assert!(LayerDescriptor::dropout(0.0).check().is_ok());
        assert!(LayerDescriptor::conv(0).check().is_err());
    }
}
