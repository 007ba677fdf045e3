//! Concept probing for layered classifiers: concept activation vectors,
//! TCAV scoring, the affine-tail fast path and inter-layer agreement.

pub mod agreement;
pub mod cav;
pub mod error;
pub mod network;
pub mod seed;
pub mod synthdata;
pub mod tcav;
pub mod tensor;

mod binio;

pub use agreement::{AgreementMatrix, ConceptLibrary, ScoreMap};
pub use cav::{CavBundle, CavOptions, ClassifierKind, LatentDataset};
pub use error::{Error, Result};
pub use network::{LayerIndex, LayerKind, LayerSpec, MlpArch, NetworkSpec, TrainConfig};
pub use synthdata::{ConceptGenSpec, ConceptProbeSet, Dataset, DatasetSpec};
pub use tcav::{Method, TcavReport};
pub use tensor::{Tape, Tensor, Var};
