//! Molecular graphs, SMILES input/output, substructure queries, descriptors
//! and 2D depiction.

pub mod canon;
pub mod element;
pub mod fingerprint;
pub mod kekule;
pub mod molecule;
pub mod props;
pub mod render;
pub mod rings;
pub mod smarts;
pub mod smiles;

pub use canon::canonical_smiles;
pub use fingerprint::{morgan_fingerprint, tanimoto, Fingerprint, FingerprintError};
pub use molecule::{Atom, Bond, BondOrder, GraphError, Molecule};
pub use props::{compute_properties, compute_properties_with, PropertyVector, PropsConfig, PropsError};
pub use render::{augment_rotations, layout_2d, render, Layout2D, MolImage, RenderError};
pub use smarts::{match_smarts, SmartsError, SmartsPattern};
pub use smiles::{parse_smiles, SmilesError};
