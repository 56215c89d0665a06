//! Cross-chain instant payments over simulated UTXO chains: ledgers, payment
//! channels, multi-hop HTLC payments, source routing with onion packets, and a
//! deterministic scenario simulator.

pub mod chainlab;
pub mod channels;
pub mod crp;
pub mod simnet;
pub mod swap;
