//! Payment channels as cooperatively updated two-party ledgers, plus routed
//! swaption positions, decoupling and unwinding.
//!
//! A channel's latest agreed state is always closable unilaterally: closing
//! publishes one transaction spending the funding output into the two
//! balances and one output per live contract.

mod channel;
mod route;

pub use channel::{close_channel, open_channel, update_channel, Channel, ChannelContract, ChannelUpdate};
pub use route::{
    decouple, route_swaption, settle, unwind, Behavior, LnEvent, LnEventKind, Network, Path, PositionStatus,
    RouteTerms, RoutedHop, RoutedPosition,
};

use thiserror::Error;

use crate::chainsim::{Amount, ChainError, ChainId, PartyId};
use crate::contracts::ContractError;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LightningError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error("{party} has {has} on {chain}, needs {needs}")]
    InsufficientFunds { party: PartyId, chain: ChainId, needs: Amount, has: Amount },
    #[error("channel needs two distinct parties and a positive total")]
    BadChannel,
    #[error("{0} did not consent to the update")]
    NoConsent(PartyId),
    #[error("update holds {got} but the channel holds {expected}")]
    NotConserved { expected: Amount, got: Amount },
    #[error("channel {0} is closed")]
    ChannelClosed(usize),
    #[error("unknown contract {0}")]
    UnknownContract(String),
    #[error("contract {0} already exists")]
    DuplicateContract(String),
    #[error("contract {0} is not a channel HTLC between the channel's parties")]
    BadContract(String),
    #[error("no open {chain} channel between {a} and {b}")]
    NoChannel { a: PartyId, b: PartyId, chain: ChainId },
    #[error("invalid path: {0}")]
    BadPath(String),
    #[error("{party} has {has} in channel {channel}, needs {needs}")]
    InsufficientCapacity { channel: usize, party: PartyId, needs: Amount, has: Amount },
    #[error("{0} is not an intermediary on both legs")]
    NotIntermediary(PartyId),
    #[error("positions do not offset: {0}")]
    NotOffsetting(String),
    #[error("position {0} is not open")]
    PositionNotOpen(usize),
}
