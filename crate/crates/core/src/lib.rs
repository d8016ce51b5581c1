//! Structured pruning of dense layers by eigenvector centrality.
//!
//! Neurons of a dense layer are nodes of a cosine-similarity graph over their
//! weight columns; the least central neurons are removed and the reduced
//! network is fine-tuned.
//!
//! * [`tensor_io`]: binary tensor container and layer bundles
//! * [`graph`]: column normalisation, similarity matrix, thresholded graph
//! * [`centrality`]: power-iteration eigenvector centrality and ranking
//! * [`prune`]: prune plans, layer and consumer slicing, magnitude baseline
//! * [`net`]: small MLP with SGD training for the prune / fine-tune loop
//! * [`experiment`]: ratio / threshold / method sweeps and reports

pub mod centrality;
pub mod experiment;
pub mod graph;
pub mod matrix;
pub mod net;
pub mod par;
pub mod prune;
pub mod tensor_io;

pub use centrality::{eigenvector_centrality, rank_neurons, CentralityScores};
pub use graph::{
    build_graph, normalize_columns, similarity_matrix, SimilarityGraph, SimilarityMatrix,
};
pub use matrix::Matrix;
pub use net::{Dataset, MlpModel, TrainConfig};
pub use par::Execution;
pub use prune::{apply_plan, magnitude_plan, make_plan, slice_downstream, PrunePlan};
pub use tensor_io::{LayerBundle, TensorFile};
