pub mod groupoid;
pub mod matrixcore;
pub mod bimodule;
pub mod fellbundle;
pub mod csalgebra;
pub mod io;
pub mod morita;
pub mod cli;
