//! Signed peer-to-peer message envelope and its length-prefixed framing.
//!
//! A frame is a 4-byte big-endian length followed by a JSON envelope
//! `{type, sender, payload_hex, sig_hex}`. The signature covers the
//! length-prefixed type name followed by the raw payload bytes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Decode, DecodeError, Decoder, Encoder};
use crate::crypto::{Account, Address, Signature};
use crate::ledger::{Block, Transaction};
use crate::membership::StaticNodesFile;

pub const MAX_FRAME_BYTES: usize = 16 * 1024 * 1024;
/// Upper bound on blocks returned for one `get_blocks` request.
pub const MAX_BLOCKS_PER_REPLY: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Tx,
    Block,
    GetBlocks,
    Blocks,
    Roster,
    RosterAck,
    Ping,
    Pong,
}

impl MessageType {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Tx => "tx",
            MessageType::Block => "block",
            MessageType::GetBlocks => "get_blocks",
            MessageType::Blocks => "blocks",
            MessageType::Roster => "roster",
            MessageType::RosterAck => "roster_ack",
            MessageType::Ping => "ping",
            MessageType::Pong => "pong",
        }
    }

    /// Types relayed to other peers after first receipt.
    pub fn is_gossiped(self) -> bool {
        matches!(self, MessageType::Tx | MessageType::Block | MessageType::Roster)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Tx(Transaction),
    Block(Block),
    GetBlocks { from_height: u64, limit: u32 },
    Blocks(Vec<Block>),
    Roster(StaticNodesFile),
    RosterAck { epoch: u64 },
    Ping { nonce: u64 },
    Pong { nonce: u64 },
}

impl Payload {
    pub fn message_type(&self) -> MessageType {
        match self {
            Payload::Tx(_) => MessageType::Tx,
            Payload::Block(_) => MessageType::Block,
            Payload::GetBlocks { .. } => MessageType::GetBlocks,
            Payload::Blocks(_) => MessageType::Blocks,
            Payload::Roster(_) => MessageType::Roster,
            Payload::RosterAck { .. } => MessageType::RosterAck,
            Payload::Ping { .. } => MessageType::Ping,
            Payload::Pong { .. } => MessageType::Pong,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        match self {
            Payload::Tx(tx) => enc.value(tx),
            Payload::Block(b) => enc.value(b),
            Payload::GetBlocks { from_height, limit } => enc.u64(*from_height).u32(*limit),
            Payload::Blocks(bs) => enc.list(bs),
            Payload::Roster(f) => enc.value(f),
            Payload::RosterAck { epoch } => enc.u64(*epoch),
            Payload::Ping { nonce } | Payload::Pong { nonce } => enc.u64(*nonce),
        };
        enc.finish()
    }

    pub fn from_bytes(kind: MessageType, bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let payload = match kind {
            MessageType::Tx => Payload::Tx(Transaction::decode(&mut dec)?),
            MessageType::Block => Payload::Block(Block::decode(&mut dec)?),
            MessageType::GetBlocks => Payload::GetBlocks {
                from_height: dec.u64()?,
                limit: dec.u32()?,
            },
            MessageType::Blocks => Payload::Blocks(dec.list()?),
            MessageType::Roster => Payload::Roster(StaticNodesFile::decode(&mut dec)?),
            MessageType::RosterAck => Payload::RosterAck { epoch: dec.u64()? },
            MessageType::Ping => Payload::Ping { nonce: dec.u64()? },
            MessageType::Pong => Payload::Pong { nonce: dec.u64()? },
        };
        dec.finish()?;
        Ok(payload)
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("malformed envelope: {0}")]
    Envelope(String),
    #[error("malformed payload: {0}")]
    Payload(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub sender: Address,
    pub payload_hex: String,
    pub sig_hex: String,
}

fn signing_bytes(kind: MessageType, payload: &[u8]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str(kind.as_str()).fixed(payload);
    enc.finish()
}

impl WireMessage {
    pub fn sign(account: &Account, payload: &Payload) -> Self {
        let kind = payload.message_type();
        let bytes = payload.to_bytes();
        let sig = account.sign(&signing_bytes(kind, &bytes));
        Self {
            kind,
            sender: account.address(),
            payload_hex: hex::encode(&bytes),
            sig_hex: hex::encode(sig.0),
        }
    }

    pub fn payload_bytes(&self) -> Result<Vec<u8>, WireError> {
        hex::decode(&self.payload_hex).map_err(|e| WireError::Envelope(e.to_string()))
    }

    pub fn signature(&self) -> Result<Signature, WireError> {
        let raw = hex::decode(&self.sig_hex).map_err(|e| WireError::Envelope(e.to_string()))?;
        Signature::from_slice(&raw).map_err(|e| WireError::Envelope(e.to_string()))
    }

    /// True if the signature verifies under `key` and `key` belongs to the sender.
    pub fn verify(&self, key: &crate::crypto::PublicKey) -> bool {
        if key.address() != self.sender {
            return false;
        }
        match (self.payload_bytes(), self.signature()) {
            (Ok(payload), Ok(sig)) => key.verify(&signing_bytes(self.kind, &payload), &sig),
            _ => false,
        }
    }

    pub fn payload(&self) -> Result<Payload, WireError> {
        Ok(Payload::from_bytes(self.kind, &self.payload_bytes()?)?)
    }

    /// Identity for duplicate suppression.
    pub fn digest(&self) -> crate::crypto::Hash {
        crate::crypto::sha256_concat(&[self.kind.as_str().as_bytes(), self.payload_hex.as_bytes()])
    }

    pub fn to_frame(&self) -> Result<Vec<u8>, WireError> {
        let body = serde_json::to_vec(self).map_err(|e| WireError::Envelope(e.to_string()))?;
        if body.len() > MAX_FRAME_BYTES {
            return Err(WireError::FrameTooLarge(body.len()));
        }
        let mut frame = Vec::with_capacity(4 + body.len());
        frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
        frame.extend_from_slice(&body);
        Ok(frame)
    }

    pub fn from_frame_body(body: &[u8]) -> Result<Self, WireError> {
        serde_json::from_slice(body).map_err(|e| WireError::Envelope(e.to_string()))
    }
}

/// Validates a frame header and returns the body length.
pub fn frame_len(header: [u8; 4]) -> Result<usize, WireError> {
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_BYTES {
        Err(WireError::FrameTooLarge(len))
    } else {
        Ok(len)
    }
}
