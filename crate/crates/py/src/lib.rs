//! Python bindings: scenarios and reports, quote math, route finding and
//! onion packets.

// The pyo3 0.22 method macros trip this lint on every `PyResult` return.
#![allow(clippy::useless_conversion)]

use std::collections::BTreeMap;
use std::str::FromStr;

use comit_core::chainlab::{AssetId, ChainId, HashFnId};
use comit_core::crp::{self, ChainInfo, NodeId, Peeled, PACKET_LEN, PAYLOAD_LEN};
use comit_core::simnet;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

create_exception!(comit, ComitError, PyException, "Raised for invalid input to any comit operation.");

fn err(e: impl ToString) -> PyErr {
    ComitError::new_err(e.to_string())
}

fn node_id(hex: &str) -> PyResult<NodeId> {
    NodeId::from_str(hex).map_err(|e| err(format!("bad node id {hex:?}: {e}")))
}

fn hash_fn(name: &str) -> PyResult<HashFnId> {
    HashFnId::from_str(name).map_err(err)
}

#[pyclass(module = "comit")]
#[derive(Clone)]
struct Scenario {
    inner: simnet::Scenario,
}

#[pymethods]
impl Scenario {
    /// Parses and validates a scenario document; all problems are reported
    /// together in the exception message.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        simnet::validate_scenario(text)
            .map(|inner| Scenario { inner })
            .map_err(|errs| err(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")))
    }

    #[staticmethod]
    fn random(seed: u64) -> Self {
        Scenario { inner: simnet::random_scenario(seed) }
    }

    #[staticmethod]
    fn demo(name: &str) -> PyResult<Self> {
        let text = simnet::demo(name).ok_or_else(|| err(format!("no demo named {name:?}")))?;
        Self::from_json(text)
    }

    #[staticmethod]
    fn demos() -> Vec<&'static str> {
        simnet::DEMOS.iter().map(|(n, _)| *n).collect()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn actors(&self) -> Vec<String> {
        self.inner.actors.iter().map(|a| a.id.clone()).collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn run(&self, py: Python<'_>) -> Report {
        let inner = py.allow_threads(|| simnet::run_scenario(&self.inner));
        Report { inner }
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(seed={}, chains={}, actors={}, payments={})",
            self.inner.seed,
            self.inner.chains.len(),
            self.inner.actors.len(),
            self.inner.payments.len()
        )
    }
}

#[pyclass(module = "comit", frozen)]
struct Report {
    inner: simnet::Report,
}

#[pymethods]
impl Report {
    #[getter]
    fn digest(&self) -> &str {
        &self.inner.digest
    }

    #[getter]
    fn ticks(&self) -> u64 {
        self.inner.ticks
    }

    fn is_clean(&self) -> bool {
        self.inner.is_clean()
    }

    /// `(tick, kind, detail)` for every invariant violation.
    #[getter]
    fn violations(&self) -> Vec<(u64, String, String)> {
        self.inner.violations.iter().map(|v| (v.tick, v.kind.clone(), v.detail.clone())).collect()
    }

    /// Final status of each payment, in scenario order of start.
    #[getter]
    fn payment_statuses(&self) -> PyResult<Vec<String>> {
        self.inner
            .payments
            .iter()
            .map(|p| serde_json::to_value(p.status).map(|v| v.as_str().unwrap_or_default().to_owned()).map_err(err))
            .collect()
    }

    /// Final total of `actor` in `asset`, on chain plus in channels.
    fn balance(&self, actor: &str, asset: u32) -> PyResult<u64> {
        self.inner
            .balances
            .iter()
            .find(|a| a.actor == actor)
            .and_then(|a| a.assets.iter().find(|b| b.asset == asset))
            .map(|b| b.total)
            .ok_or_else(|| err(format!("no balance for {actor} in asset {asset}")))
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }
}

#[pyclass(module = "comit", frozen)]
#[derive(Clone, Copy)]
struct RateQuote {
    inner: crp::RateQuote,
}

#[pymethods]
impl RateQuote {
    #[new]
    #[pyo3(signature = (asset_in, asset_out, rate_num, rate_den, base_fee=0, fee_ppm=0))]
    fn new(asset_in: u32, asset_out: u32, rate_num: u64, rate_den: u64, base_fee: u64, fee_ppm: u32) -> PyResult<Self> {
        let inner = crp::RateQuote {
            asset_in: AssetId(asset_in),
            asset_out: AssetId(asset_out),
            rate_num,
            rate_den,
            base_fee,
            fee_ppm,
        };
        inner.validate().map_err(err)?;
        Ok(RateQuote { inner })
    }

    /// Amount of `asset_out` delivered for `amount_in` (rounded down).
    fn forward(&self, amount_in: u64) -> u128 {
        self.inner.forward(amount_in)
    }

    /// `(amount_in, fee)` needed to deliver `amount_out` (rounded up).
    fn amount_in_for(&self, amount_out: u64) -> PyResult<(u64, u64)> {
        self.inner.amount_in_for(amount_out).map_err(err)
    }

    fn __repr__(&self) -> String {
        let q = &self.inner;
        format!(
            "RateQuote({} -> {}, {}/{}, base_fee={}, fee_ppm={})",
            q.asset_in.0, q.asset_out.0, q.rate_num, q.rate_den, q.base_fee, q.fee_ppm
        )
    }
}

/// `(amount, fee)` per hop, sender first, for delivering `amount_out`
/// through `quotes`.
#[pyfunction]
fn compute_hop_amounts(quotes: Vec<RateQuote>, amount_out: u64) -> PyResult<Vec<(u64, u64)>> {
    let quotes: Vec<crp::RateQuote> = quotes.iter().map(|q| q.inner).collect();
    crp::compute_hop_amounts(&quotes, amount_out).map_err(err)
}

/// A routing graph assembled by hand. Node ids are hex-encoded compressed
/// public keys (see `NodeKey.id`).
#[pyclass(module = "comit")]
#[derive(Default)]
struct Graph {
    chains: BTreeMap<ChainId, ChainInfo>,
    channels: Vec<(ChainId, NodeId, NodeId, u64)>,
    quotes: BTreeMap<NodeId, Vec<crp::RateQuote>>,
}

#[pymethods]
impl Graph {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    fn add_chain(&mut self, chain: u32, asset: u32, hash_fns: Vec<String>) -> PyResult<()> {
        let hash_fns = hash_fns.iter().map(|h| hash_fn(h)).collect::<PyResult<_>>()?;
        self.chains.insert(ChainId(chain), ChainInfo { asset: AssetId(asset), hash_fns });
        Ok(())
    }

    fn add_channel(&mut self, chain: u32, x: &str, y: &str, capacity: u64) -> PyResult<()> {
        self.channels.push((ChainId(chain), node_id(x)?, node_id(y)?, capacity));
        Ok(())
    }

    fn set_quotes(&mut self, node: &str, quotes: Vec<RateQuote>) -> PyResult<()> {
        self.quotes.insert(node_id(node)?, quotes.iter().map(|q| q.inner).collect());
        Ok(())
    }

    /// The cheapest admissible route as a JSON document.
    #[pyo3(signature = (sender, recipient, amount, asset, hash_fn_name=None))]
    fn find_route(
        &self,
        sender: &str,
        recipient: &str,
        amount: u64,
        asset: u32,
        hash_fn_name: Option<&str>,
    ) -> PyResult<String> {
        let mut graph = crp::Graph::new(self.chains.clone());
        for (chain, x, y, capacity) in &self.channels {
            graph.add_channel(*chain, *x, *y, *capacity);
        }
        for (node, quotes) in &self.quotes {
            graph.set_quotes(*node, quotes.clone());
        }
        let hash_fn = hash_fn_name.map(hash_fn).transpose()?;
        let route = crp::find_route(&graph, node_id(sender)?, node_id(recipient)?, amount, AssetId(asset), hash_fn)
            .map_err(err)?;
        serde_json::to_string(&route).map_err(err)
    }
}

#[pyclass(module = "comit", frozen)]
struct NodeKey {
    inner: crp::NodeKey,
}

#[pymethods]
impl NodeKey {
    #[new]
    fn new(seed: &[u8]) -> Self {
        NodeKey { inner: crp::NodeKey::from_seed(seed) }
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id().to_string()
    }
}

/// Builds an onion for `hops` (hex node ids); returns the packet bytes.
#[pyfunction]
fn onion_create<'py>(
    py: Python<'py>,
    hops: Vec<String>,
    session_key: [u8; 32],
    payloads: Vec<Vec<u8>>,
    associated_data: &[u8],
) -> PyResult<Bound<'py, PyBytes>> {
    if hops.len() != payloads.len() {
        return Err(err("one payload per hop"));
    }
    let hops = hops.iter().map(|h| node_id(h)).collect::<PyResult<Vec<_>>>()?;
    let packet = crp::onion_create(&hops, &session_key, &payloads, associated_data).map_err(err)?;
    Ok(PyBytes::new_bound(py, &packet.to_bytes()))
}

/// Peels one layer: `(payload, next_packet)`, with `next_packet` None at
/// the final hop.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn onion_peel<'py>(
    py: Python<'py>,
    packet: &[u8],
    key: &NodeKey,
    associated_data: &[u8],
) -> PyResult<(Bound<'py, PyBytes>, Option<Bound<'py, PyBytes>>)> {
    let packet = crp::OnionPacket::from_bytes(packet).map_err(err)?;
    match crp::onion_peel(&packet, &key.inner, associated_data).map_err(err)? {
        Peeled::Forward { payload, next } => {
            Ok((PyBytes::new_bound(py, &payload), Some(PyBytes::new_bound(py, &next.to_bytes()))))
        }
        Peeled::Final { payload } => Ok((PyBytes::new_bound(py, &payload), None)),
    }
}

#[pymodule]
fn comit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ComitError", m.py().get_type_bound::<ComitError>())?;
    m.add("PACKET_LEN", PACKET_LEN)?;
    m.add("PAYLOAD_LEN", PAYLOAD_LEN)?;
    m.add_class::<Scenario>()?;
    m.add_class::<Report>()?;
    m.add_class::<RateQuote>()?;
    m.add_class::<Graph>()?;
    m.add_class::<NodeKey>()?;
    m.add_function(wrap_pyfunction!(compute_hop_amounts, m)?)?;
    m.add_function(wrap_pyfunction!(onion_create, m)?)?;
    m.add_function(wrap_pyfunction!(onion_peel, m)?)?;
    Ok(())
}
