use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which part of the protocol a dataset belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Full,
    TrainVal,
    Train,
    Validation,
    Test,
}

/// Images as `u8 [n, C, H, W]` with small-integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<u8>,
    labels: Vec<u8>,
    channels: usize,
    height: usize,
    width: usize,
    pub source: String,
    pub class_names: Vec<String>,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(
        images: Vec<u8>,
        labels: Vec<u8>,
        (channels, height, width): (usize, usize, usize),
        source: impl Into<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Data(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::Data(format!(
                "image dims must be positive, got {height}x{width}"
            )));
        }
        let per = channels * height * width;
        if images.len() != labels.len() * per {
            return Err(Error::Data(format!(
                "{} pixel bytes for {} images of {per} bytes",
                images.len(),
                labels.len()
            )));
        }
        if class_names.is_empty() {
            return Err(Error::Data("dataset needs at least one class name".into()));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= class_names.len()) {
            return Err(Error::Data(format!(
                "label {l} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Dataset {
            images,
            labels,
            channels,
            height,
            width,
            source: source.into(),
            class_names,
            split: SplitTag::Full,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn images(&self) -> &[u8] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let per = self.image_len();
        &self.images[i * per..(i + 1) * per]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Rows `indices`, in that order, with the same metadata.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let per = self.image_len();
        let mut images = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.metadata_clone()
        }
    }

    /// Appends `other`, which must share dims and class names.
    pub fn concat(mut self, other: &Dataset) -> Result<Dataset> {
        if other.dims() != self.dims() || other.class_names != self.class_names {
            return Err(Error::Data(
                "cannot concatenate datasets with different dims or classes".into(),
            ));
        }
        self.images.extend_from_slice(&other.images);
        self.labels.extend_from_slice(&other.labels);
        Ok(self)
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }

    pub fn with_labels(mut self, labels: Vec<u8>, class_names: Vec<String>) -> Result<Self> {
        let d = Dataset::new(
            std::mem::take(&mut self.images),
            labels,
            self.dims(),
            self.source.clone(),
            class_names,
        )?;
        Ok(d.with_split(self.split))
    }

    pub fn with_images(&self, images: Vec<u8>, dims: (usize, usize, usize)) -> Result<Self> {
        let d = Dataset::new(
            images,
            self.labels.clone(),
            dims,
            self.source.clone(),
            self.class_names.clone(),
        )?;
        Ok(d.with_split(self.split))
    }

    fn metadata_clone(&self) -> Dataset {
        Dataset {
            images: Vec::new(),
            labels: Vec::new(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            source: self.source.clone(),
            class_names: self.class_names.clone(),
            split: self.split,
        }
    }
}

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

pub const FMNIST_CLASSES: [&str; 10] = [
    "T-shirt/top",
    "Trouser",
    "Pullover",
    "Dress",
    "Coat",
    "Sandal",
    "Shirt",
    "Sneaker",
    "Bag",
    "Ankle boot",
];

pub fn digit_classes() -> Vec<String> {
    (0..10).map(|d| d.to_string()).collect()
}

pub fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Resolves a class given as a label integer or a (case-insensitive) name.
pub fn resolve_class(d: &Dataset, class: &str) -> Result<u8> {
    let wanted = match class.trim().to_ascii_lowercase().as_str() {
        "car" => "automobile".to_string(),
        "plane" => "airplane".to_string(),
        other => other.to_string(),
    };
    if let Some(i) = d
        .class_names
        .iter()
        .position(|n| n.to_ascii_lowercase() == wanted)
    {
        return Ok(i as u8);
    }
    if let Ok(i) = wanted.parse::<usize>() {
        if i < d.num_classes() {
            return Ok(i as u8);
        }
    }
    Err(Error::Data(format!(
        "unknown class '{class}' in {} (classes: {})",
        d.source,
        d.class_names.join(", ")
    )))
}
