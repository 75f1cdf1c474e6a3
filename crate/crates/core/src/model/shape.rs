use super::layer::{ActivationKind, LayerDescriptor, Shape};
use crate::error::{Error, Result};
use crate::nn::conv_out_extent;

fn invalid(position: usize, message: impl Into<String>) -> Error {
    Error::Validation {
        position,
        message: message.into(),
    }
}

/// Index of the classification head: the last Dense layer.
pub fn head_index(layers: &[LayerDescriptor]) -> Option<usize> {
    layers
        .iter()
        .rposition(|l| matches!(l, LayerDescriptor::Dense { .. }))
}

/// Output shape of a single layer applied to `input`.
pub fn layer_output(
    position: usize,
    layer: &LayerDescriptor,
    input: Shape,
    seen_flatten: bool,
) -> Result<Shape> {
    layer
        .check()
        .map_err(|e| invalid(position, e.to_string()))?;
    let needs_spatial = |name: &str| -> Result<(usize, usize, usize)> {
        match input {
            Shape::Spatial { c, h, w } => Ok((c, h, w)),
            Shape::Flat(_) => {
                let after = if seen_flatten { " after Flatten" } else { "" };
                Err(invalid(
                    position,
                    format!("{name} requires spatial input but receives flat {input}{after}"),
                ))
            }
        }
    };
    let underflow = |name: &str, h: usize, w: usize| {
        invalid(
            position,
            format!("spatial underflow: {name} on {h}x{w} input"),
        )
    };
    Ok(match *layer {
        LayerDescriptor::Conv {
            filters,
            kernel,
            stride,
            padding,
        } => {
            let (_, h, w) = needs_spatial("Conv")?;
            let (Some((oh, _)), Some((ow, _))) = (
                conv_out_extent(h, kernel, stride, padding),
                conv_out_extent(w, kernel, stride, padding),
            ) else {
                return Err(underflow("Conv", h, w));
            };
            Shape::spatial(filters, oh, ow)
        }
        LayerDescriptor::MaxPool => {
            let (c, h, w) = needs_spatial("MaxPool")?;
            if h < 2 || w < 2 {
                return Err(underflow("MaxPool", h, w));
            }
            Shape::spatial(c, h.div_ceil(2), w.div_ceil(2))
        }
        LayerDescriptor::UpSample => {
            let (c, h, w) = needs_spatial("UpSample")?;
            Shape::spatial(c, 2 * h, 2 * w)
        }
        LayerDescriptor::GlobalAvgPool => Shape::Flat(needs_spatial("GlobalAvgPool")?.0),
        LayerDescriptor::ResStage {
            filters,
            downsample,
            ..
        } => {
            let (_, h, w) = needs_spatial("ResStage")?;
            if downsample {
                if h < 2 || w < 2 {
                    return Err(underflow("ResStage", h, w));
                }
                Shape::spatial(filters, h.div_ceil(2), w.div_ceil(2))
            } else {
                Shape::spatial(filters, h, w)
            }
        }
        LayerDescriptor::Dense { units } => match input {
            Shape::Flat(_) => Shape::Flat(units),
            Shape::Spatial { .. } => {
                return Err(invalid(
                    position,
                    format!("Dense requires flat input but receives {input}; add Flatten"),
                ))
            }
        },
        LayerDescriptor::Activation {
            function: ActivationKind::Softmax,
        } => match input {
            Shape::Flat(_) => input,
            Shape::Spatial { .. } => {
                return Err(invalid(
                    position,
                    format!("softmax requires flat input but receives {input}"),
                ))
            }
        },
        LayerDescriptor::Flatten => Shape::Flat(input.numel()),
        LayerDescriptor::BatchNorm
        | LayerDescriptor::Dropout { .. }
        | LayerDescriptor::Activation { .. } => input,
    })
}

/// Validates `layers` against `input` and returns the shape after every layer,
/// `shapes[0] == input` and `shapes[i + 1]` the output of layer `i`.
pub fn infer_shapes(
    layers: &[LayerDescriptor],
    input: Shape,
    num_classes: usize,
) -> Result<Vec<Shape>> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "num_classes must be >= 2, got {num_classes}"
        )));
    }
    let mut shapes = Vec::with_capacity(layers.len() + 1);
    shapes.push(input);
    let mut seen_flatten = false;
    for (i, layer) in layers.iter().enumerate() {
        let out = layer_output(i, layer, shapes[i], seen_flatten)?;
        seen_flatten |= matches!(layer, LayerDescriptor::Flatten);
        shapes.push(out);
    }
    let Some(head) = head_index(layers) else {
        return Err(invalid(
            layers.len(),
            "no classification head (final Dense layer)",
        ));
    };
    if let Some(extra) = layers[head + 1..]
        .iter()
        .position(|l| !matches!(l, LayerDescriptor::Activation { .. }))
    {
        return Err(invalid(
            head + 1 + extra,
            "only activations may follow the classification head",
        ));
    }
    let LayerDescriptor::Dense { units } = layers[head] else {
        unreachable!()
    };
    if units != num_classes {
        return Err(invalid(
            head,
            format!("classification head has {units} units, expected {num_classes}"),
        ));
    }
    Ok(shapes)
}
