use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::dataset::{resolve_class, Dataset};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SampleSize {
    Count(usize),
    All,
}

impl FromStr for SampleSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(SampleSize::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 2 && n % 2 == 0 => Ok(SampleSize::Count(n)),
            _ => Err(Error::Config(format!(
                "sample size must be an even count >= 2 or 'all', got '{s}'"
            ))),
        }
    }
}

impl fmt::Display for SampleSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleSize::Count(n) => write!(f, "{n}"),
            SampleSize::All => write!(f, "All"),
        }
    }
}

impl Serialize for SampleSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SampleSize::Count(n) => s.serialize_u64(*n as u64),
            SampleSize::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for SampleSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            N(usize),
            S(String),
        }
        match Repr::deserialize(d)? {
            Repr::N(n) => n.to_string().parse().map_err(serde::de::Error::custom),
            Repr::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Hard,
    Easy,
}

/// Recipe for a two-class subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub dataset: String,
    pub class_a: String,
    pub class_b: String,
    pub sample_size: SampleSize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    pub seed: u64,
}

impl SubsetSpec {
    /// A stable name such as `mnist-1-5-600`.
    pub fn name(&self) -> String {
        let slug = |s: &str| {
            s.to_ascii_lowercase()
                .replace(|c: char| !c.is_ascii_alphanumeric(), "")
        };
        format!(
            "{}-{}-{}-{}",
            slug(&self.dataset),
            slug(&self.class_a),
            slug(&self.class_b),
            self.sample_size.to_string().to_ascii_lowercase()
        )
    }
}

/// Balanced two-class draw with labels remapped to `{0, 1}`.
///
/// A count draws `n/2` per class by a seeded shuffle; `All` keeps every
/// sample of both classes in source order.
pub fn build_subset(full: &Dataset, spec: &SubsetSpec) -> Result<Dataset> {
    let a = resolve_class(full, &spec.class_a)?;
    let b = resolve_class(full, &spec.class_b)?;
    if a == b {
        return Err(Error::Config(format!(
            "subset classes must differ, got '{}' twice",
            spec.class_a
        )));
    }
    let of = |c: u8| -> Vec<usize> { (0..full.len()).filter(|&i| full.labels()[i] == c).collect() };
    let (mut ia, mut ib) = (of(a), of(b));
    let indices: Vec<usize> = match spec.sample_size {
        SampleSize::All => {
            if ia.is_empty() || ib.is_empty() {
                return Err(Error::Data(format!(
                    "class pair {}/{} is not populated",
                    spec.class_a, spec.class_b
                )));
            }
            let mut all: Vec<usize> = ia.into_iter().chain(ib).collect();
            all.sort_unstable();
            all
        }
        SampleSize::Count(n) => {
            let half = n / 2;
            for (name, idx) in [(&spec.class_a, &ia), (&spec.class_b, &ib)] {
                if idx.len() < half {
                    return Err(Error::Data(format!(
                        "class '{name}' has {} samples, {half} needed for a subset of {n}",
                        idx.len()
                    )));
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            ia.shuffle(&mut rng);
            ib.shuffle(&mut rng);
            let mut picked: Vec<usize> = ia[..half].iter().chain(&ib[..half]).copied().collect();
            picked.shuffle(&mut rng);
            picked
        }
    };
    let sub = full.select(&indices);
    let labels = sub.labels().iter().map(|&l| u8::from(l == b)).collect();
    let names = vec![
        full.class_names[a as usize].clone(),
        full.class_names[b as usize].clone(),
    ];
    let mut out = sub.with_labels(labels, names)?;
    out.source = spec.name();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::digit_classes;

    fn digits(per_class: usize) -> Dataset {
        let labels: Vec<u8> = (0..10 * per_class).map(|i| (i % 10) as u8).collect();
        let images = (0..labels.len()).map(|i| (i % 256) as u8).collect();
        Dataset::new(images, labels, (1, 1, 1), "digits", digit_classes()).unwrap()
    }

    fn spec(size: &str, seed: u64) -> SubsetSpec {
        SubsetSpec {
            dataset: "mnist".into(),
            class_a: "4".into(),
            class_b: "9".into(),
            sample_size: size.parse().unwrap(),
            difficulty: Some(Difficulty::Hard),
            seed,
        }
    }

    #[test]
    fn balanced_draw_and_remap() {
        let d = build_subset(&digits(100), &spec("128", 1)).unwrap();
        assert_eq!(d.len(), 128);
        assert_eq!(d.class_counts(), vec![64, 64]);
        assert_eq!(d.class_names, vec!["4", "9"]);
        assert_eq!(d.source, "mnist-4-9-128");
    }

    #[test]
    fn all_takes_every_sample() {
        let d = build_subset(&digits(37), &spec("all", 0)).unwrap();
        assert_eq!(d.class_counts(), vec![37, 37]);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let full = digits(100);
        let a = build_subset(&full, &spec("128", 5)).unwrap();
        assert_eq!(a, build_subset(&full, &spec("128", 5)).unwrap());
        assert_ne!(a, build_subset(&full, &spec("128", 6)).unwrap());
    }

    #[test]
    fn errors() {
        assert!(matches!(
            build_subset(&digits(10), &spec("128", 0)),
            Err(Error::Data(_))
        ));
        let mut s = spec("128", 0);
        s.class_b = "4".into();
        assert!(build_subset(&digits(100), &s).is_err());
        s.class_b = "eleven".into();
        assert!(build_subset(&digits(100), &s).is_err());
        assert!("7".parse::<SampleSize>().is_err());
    }

    #[test]
    fn sample_size_json() {
        assert_eq!(
            serde_json::to_string(&SampleSize::Count(600)).unwrap(),
            "600"
        );
        assert_eq!(
            serde_json::from_str::<SampleSize>("\"All\"").unwrap(),
            SampleSize::All
        );
        assert_eq!(
            serde_json::from_str::<SampleSize>("128").unwrap(),
            SampleSize::Count(128)
        );
    }
}
