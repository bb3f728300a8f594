mod adam;
mod cnn;
mod linear;
mod lstm;
mod mlp;
mod model;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use cnn::{Cnn, CnnTrace, Conv1d, ConvSpec};
pub use linear::Linear;
pub use lstm::{BiLstm, BiLstmTrace, LstmDirection};
pub use mlp::{Mlp, MlpTrace};
pub use model::{
    FeatureNorm, ModelConfig, Network, Outputs, StudentModel, StudentTrace, Tape, TeacherModel,
    TeacherTrace,
};
pub use params::{ParamView, Parameters};
pub use tensor::{aggregate_add, Tensor};
