//! Differentiable operators. Each file adds forward constructors to
//! [`Graph`](crate::Graph) and the matching backward kernels.

pub(crate) mod attention;
pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linalg;
pub(crate) mod loss;
pub(crate) mod norm;
pub(crate) mod shape;
