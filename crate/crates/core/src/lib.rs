//! Core algorithms for a permissioned proof-of-authority chain with
//! capability-based access control and hashed-index data authentication.

pub mod bench;
pub mod codec;
pub mod consensus;
pub mod contracts;
pub mod crypto;
pub mod ledger;
pub mod membership;
pub mod merkle;
pub mod security;
pub mod wire;

pub use consensus::{ChainView, ConsensusParams, ValidatorHistory, ValidatorSet};
pub use contracts::{Action, CapToken, ContractKind};
pub use crypto::{Account, Address, Hash, PublicKey, Signature};
pub use ledger::{Block, BlockHeader, GenesisConfig, Transaction, WorldState};
pub use membership::{LocalRoster, NodeRecord, Oracle, Role, StaticNodesFile};
pub use security::{AccessDecision, DenyReason, EntityProfile, EntityRole, FeatureRecord, StageTimings};
