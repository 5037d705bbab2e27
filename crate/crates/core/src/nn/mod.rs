//! A small tensor engine with the layers of the classifier and their exact
//! backward passes. Tensors are laid out row-major with channels last.

mod layers;
mod model;
mod tensor;

pub use layers::{
    conv2d, conv2d_backward, dense, dense_backward, maxpool2x2, maxpool2x2_backward, relu,
    relu_backward, softmax, softmax_backward, ConvGrads, DenseGrads, Padding,
};
pub use model::{
    build_paper_model, count_params, paper_layers, Gradients, LayerSpec, Model, PAPER_INPUT_SHAPE,
};
pub use tensor::{Scalar, Tensor};
