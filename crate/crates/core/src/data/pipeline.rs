use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::dataset::{Dataset, SplitTag};
use super::image::{
    apply_filter, apply_filter_real, gray_to_rgb, preprocess, upsample2x, FilterKind,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PipelineStep {
    SharpenFilter,
    BlurFilter,
    Preprocess,
    Upsample2x,
    Scale01,
    ToRGB,
}

impl PipelineStep {
    pub fn name(self) -> &'static str {
        match self {
            PipelineStep::SharpenFilter => "sharpen",
            PipelineStep::BlurFilter => "blur",
            PipelineStep::Preprocess => "preprocess",
            PipelineStep::Upsample2x => "upsample",
            PipelineStep::Scale01 => "scale01",
            PipelineStep::ToRGB => "torgb",
        }
    }
}

impl FromStr for PipelineStep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "sharpen" | "sharpenfilter" => PipelineStep::SharpenFilter,
            "blur" | "blurfilter" => PipelineStep::BlurFilter,
            "preprocess" => PipelineStep::Preprocess,
            "upsample" | "upsample2x" => PipelineStep::Upsample2x,
            "scale01" => PipelineStep::Scale01,
            "torgb" | "rgb" => PipelineStep::ToRGB,
            _ => {
                return Err(Error::Config(format!(
                    "unknown pipeline step '{s}' (expected sharpen, blur, preprocess, upsample, scale01, torgb)"
                )))
            }
        })
    }
}

/// Ordered image-processing steps; order is an experimental variable.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ImagePipeline(pub Vec<PipelineStep>);

impl FromStr for ImagePipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().is_empty() {
            return Ok(ImagePipeline::default());
        }
        s.split(',')
            .map(str::parse)
            .collect::<Result<Vec<_>>>()
            .map(ImagePipeline)
    }
}

impl fmt::Display for ImagePipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|s| s.name()).collect();
        write!(f, "{}", names.join(","))
    }
}

impl Serialize for ImagePipeline {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for step in &self.0 {
            seq.serialize_element(step.name())?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for ImagePipeline {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<_>>>()
            .map(ImagePipeline)
            .map_err(serde::de::Error::custom)
    }
}

impl ImagePipeline {
    /// Checks step preconditions against the starting channel count and
    /// returns the output `(C, H, W)`.
    pub fn validate(&self, dims: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = dims;
        let normalisers = self
            .0
            .iter()
            .filter(|s| matches!(s, PipelineStep::Preprocess | PipelineStep::Scale01))
            .count();
        if normalisers > 1 {
            return Err(Error::Config(
                "pipeline may contain at most one of preprocess, scale01".into(),
            ));
        }
        for (i, step) in self.0.iter().enumerate() {
            match step {
                PipelineStep::Preprocess if c != 3 => {
                    return Err(Error::Config(format!(
                        "pipeline step {i} (preprocess) needs 3 channels but sees {c}; add torgb before it"
                    )))
                }
                PipelineStep::ToRGB => c = 3,
                PipelineStep::Upsample2x => {
                    h *= 2;
                    w *= 2;
                }
                _ => {}
            }
        }
        Ok((c, h, w))
    }
}

enum Pixels {
    Bytes(Vec<u8>),
    Real(Vec<f32>),
}

fn run_one(img: &[u8], dims: (usize, usize, usize), steps: &[PipelineStep]) -> Result<Vec<f32>> {
    let (mut c, mut h, mut w) = dims;
    let mut px = Pixels::Bytes(img.to_vec());
    for step in steps {
        px = match (step, px) {
            (PipelineStep::SharpenFilter, Pixels::Bytes(b)) => {
                Pixels::Bytes(apply_filter(&b, (c, h, w), FilterKind::Sharpen))
            }
            (PipelineStep::BlurFilter, Pixels::Bytes(b)) => {
                Pixels::Bytes(apply_filter(&b, (c, h, w), FilterKind::Blur))
            }
            (PipelineStep::SharpenFilter, Pixels::Real(r)) => {
                Pixels::Real(apply_filter_real(&r, (c, h, w), FilterKind::Sharpen))
            }
            (PipelineStep::BlurFilter, Pixels::Real(r)) => {
                Pixels::Real(apply_filter_real(&r, (c, h, w), FilterKind::Blur))
            }
            (PipelineStep::Preprocess, p) => Pixels::Real(preprocess(&to_real(p), (c, h, w))?),
            (PipelineStep::Scale01, p) => {
                Pixels::Real(to_real(p).iter().map(|v| v / 255.0).collect())
            }
            (PipelineStep::Upsample2x, p) => {
                let out = match p {
                    Pixels::Bytes(b) => Pixels::Bytes(upsample2x(&b, (c, h, w))),
                    Pixels::Real(r) => Pixels::Real(upsample2x(&r, (c, h, w))),
                };
                h *= 2;
                w *= 2;
                out
            }
            (PipelineStep::ToRGB, p) if c == 3 => p,
            (PipelineStep::ToRGB, p) => {
                c = 3;
                match p {
                    Pixels::Bytes(b) => Pixels::Bytes(gray_to_rgb(&b)),
                    Pixels::Real(r) => Pixels::Real(gray_to_rgb(&r)),
                }
            }
        };
    }
    Ok(to_real(px))
}

fn to_real(p: Pixels) -> Vec<f32> {
    match p {
        Pixels::Bytes(b) => b.into_iter().map(f32::from).collect(),
        Pixels::Real(r) => r,
    }
}

/// A dataset after its pipeline: real-valued `[n, C, H, W]` plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorDataset {
    pub data: Vec<f32>,
    pub labels: Vec<u8>,
    pub dims: (usize, usize, usize),
    pub num_classes: usize,
    pub split: SplitTag,
}

impl TensorDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    /// Stacks the rows `indices` into a `[len, C, H, W]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let per = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        let (c, h, w) = self.dims;
        let labels = indices.iter().map(|&i| self.labels[i] as usize).collect();
        Ok((Tensor::new(&[indices.len(), c, h, w], data)?, labels))
    }
}

/// Applies `p` to every image, strictly in step order.
pub fn run_pipeline(d: &Dataset, p: &ImagePipeline) -> Result<TensorDataset> {
    let dims = p.validate(d.dims())?;
    let per = dims.0 * dims.1 * dims.2;
    let mut data = Vec::with_capacity(d.len() * per);
    for i in 0..d.len() {
        data.extend(run_one(d.image(i), d.dims(), &p.0)?);
    }
    Ok(TensorDataset {
        data,
        labels: d.labels().to_vec(),
        dims,
        num_classes: d.num_classes(),
        split: d.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::names;

    fn gray(pixels: Vec<u8>, h: usize, w: usize) -> Dataset {
        Dataset::new(pixels, vec![0], (1, h, w), "probe", names(&["a", "b"])).unwrap()
    }

    fn pipe(s: &str) -> ImagePipeline {
        s.parse().unwrap()
    }

    #[test]
    fn scale01_divides_by_255() {
        let d = gray(vec![0, 51, 255, 102], 2, 2);
        let t = run_pipeline(&d, &pipe("scale01")).unwrap();
        assert_eq!(t.data, vec![0.0, 0.2, 1.0, 0.4]);
        let raw = run_pipeline(&d, &ImagePipeline::default()).unwrap();
        assert_eq!(raw.data, vec![0.0, 51.0, 255.0, 102.0]);
    }

    #[test]
    fn upsample_doubles_dims() {
        let d = gray(vec![9; 28 * 28], 28, 28);
        let t = run_pipeline(&d, &pipe("upsample")).unwrap();
        assert_eq!(t.dims, (1, 56, 56));
        assert_eq!(t.data.len(), 56 * 56);
    }

    #[test]
    fn filter_order_matters_on_saturating_probe() {
        let mut px = vec![40u8; 8 * 8];
        for y in 0..8 {
            px[y * 8 + 4] = 255;
        }
        let d = gray(px, 8, 8);
        let a = run_pipeline(&d, &pipe("torgb,sharpen,preprocess")).unwrap();
        let b = run_pipeline(&d, &pipe("torgb,preprocess,sharpen")).unwrap();
        let diff = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn validation_rules() {
        let d = gray(vec![0; 4], 2, 2);
        assert!(run_pipeline(&d, &pipe("preprocess")).is_err());
        assert!(run_pipeline(&d, &pipe("torgb,preprocess")).is_ok());
        assert!(pipe("torgb,preprocess,scale01")
            .validate((1, 2, 2))
            .is_err());
        assert!("sharpen,bogus".parse::<ImagePipeline>().is_err());
    }

    #[test]
    fn display_and_json_round_trip() {
        let p = pipe("Sharpen, preprocess");
        assert_eq!(p.to_string(), "sharpen,preprocess");
        let j = serde_json::to_string(&p).unwrap();
        assert_eq!(j, r#"["sharpen","preprocess"]"#);
        assert_eq!(serde_json::from_str::<ImagePipeline>(&j).unwrap(), p);
    }
}
