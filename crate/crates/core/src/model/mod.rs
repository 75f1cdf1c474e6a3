//! Declarative model descriptions and their compilation.

mod layer;
mod network;
mod shape;
mod spec;
mod variant_id;

pub use layer::{ActivationKind, LayerDescriptor, Shape};
pub use network::{compile, Network};
pub use shape::{head_index, infer_shapes, layer_output};
pub use spec::{
    base0, base0_layers, base_res18, base_seq, base_seq_layers, default_mask, repeat_block_layers,
    res18_layers, res18_schedule, Family, FilterSchedule, ModelSpec, BASESEQ_CONV_FILTERS,
    BASESEQ_DROPOUT, SCHEDULE_NAMES,
};
pub use variant_id::{parse_variant_id, variant_id};
