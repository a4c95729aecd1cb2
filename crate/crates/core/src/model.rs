//! Fully connected feed-forward network with tanh hidden layers and a linear
//! output layer, plus the flat parameter view shared by the optimizer and the
//! collectives.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::sampling::{rng_stream, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, graph: &mut Graph, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Tanh => graph.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Weights, biases and trainable scalars of an MLP with widths `dims`.
///
/// Layer `l` maps width `dims[l-1]` to `dims[l]`; its weight matrix is
/// `dims[l] × dims[l-1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    extras: Vec<(String, f64)>,
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid(format!(
            "network needs at least an input and an output width, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::invalid(format!("zero layer width in {dims:?}")));
    }
    Ok(())
}

/// Number of weights and biases of an MLP with widths `dims`.
pub fn param_count(dims: &[usize]) -> Result<usize> {
    validate_dims(dims)?;
    Ok(dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum())
}

/// Glorot (Xavier) uniform limit `√(6/(fan_in+fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform weights, zero biases, extras at their given initial values.
pub fn glorot_init(dims: &[usize], extras: &[(String, f64)], seed: u64) -> Result<MlpParams> {
    validate_dims(dims)?;
    let mut rng = rng_stream(seed, Stream::Init);
    let mut weights = Vec::with_capacity(dims.len() - 1);
    let mut biases = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = glorot_bound(fan_in, fan_out);
        weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || {
            rng.random_range(-bound..=bound)
        }));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpParams {
        dims: dims.to_vec(),
        weights,
        biases,
        extras: extras.to_vec(),
    })
}

impl MlpParams {
    /// All-zero network.
    pub fn zeros(dims: &[usize], extras: &[(String, f64)]) -> Result<Self> {
        validate_dims(dims)?;
        Ok(MlpParams {
            dims: dims.to_vec(),
            weights: dims
                .windows(2)
                .map(|w| Array2::zeros((w[1], w[0])))
                .collect(),
            biases: dims.windows(2).map(|w| Array1::zeros(w[1])).collect(),
            extras: extras.to_vec(),
        })
    }

    /// Builds parameters from explicit per-layer matrices.
    pub fn from_layers(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        extras: Vec<(String, f64)>,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::invalid(format!(
                "{} weight matrices and {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut dims = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ncols() != *dims.last().unwrap() || b.len() != w.nrows() {
                return Err(Error::invalid("inconsistent layer shapes"));
            }
            dims.push(w.nrows());
        }
        validate_dims(&dims)?;
        Ok(MlpParams {
            dims,
            weights,
            biases,
            extras,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn extras(&self) -> &[(String, f64)] {
        &self.extras
    }

    pub fn extra(&self, name: &str) -> Option<f64> {
        self.extras.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    /// Length of the flat vector: weights, biases and extras.
    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
            + self.extras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Layer by layer, row-major weights then bias; extras last in order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out.extend(self.extras.iter().map(|&(_, v)| v));
        out
    }

    /// Inverse of [`MlpParams::flatten`], overwriting the values in place.
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: flat.len(),
            });
        }
        let mut rest = flat;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (head, tail) = rest.split_at(w.len());
            w.iter_mut().zip(head).for_each(|(d, s)| *d = *s);
            let (head, tail) = tail.split_at(b.len());
            b.iter_mut().zip(head).for_each(|(d, s)| *d = *s);
            rest = tail;
        }
        for ((_, v), s) in self.extras.iter_mut().zip(rest) {
            *v = *s;
        }
        Ok(())
    }

    /// Registers every parameter as a graph variable.
    pub fn bind(&self, graph: &mut Graph, activation: Activation) -> Result<BoundParams> {
        let mut weights = Vec::with_capacity(self.depth());
        let mut biases = Vec::with_capacity(self.depth());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            weights.push(graph.variable(w.clone())?);
            biases.push(graph.variable(b.clone().insert_axis(ndarray::Axis(0)))?);
        }
        let extras = self
            .extras
            .iter()
            .map(|(name, v)| Ok((name.clone(), graph.variable(Array2::from_elem((1, 1), *v))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams {
            input_width: self.dims[0],
            weights,
            biases,
            extras,
            activation,
        })
    }

    /// Writes a parameter snapshot; see [`MlpParams::read_snapshot`].
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(SNAPSHOT_MAGIC);
        buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&(self.extras.len() as u32).to_le_bytes());
        for (name, _) in &self.extras {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
        }
        let flat = self.flatten();
        buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Reads a snapshot written by [`MlpParams::write_snapshot`].
    ///
    /// Layout, all integers and floats little-endian:
    /// `b"PINNPARM"`, `u32` version (1), `u32` layer-width count, that many
    /// `u64` widths, `u32` extras count, per extra a `u32` byte length and
    /// UTF-8 name, `u64` value count, then the flat `f64` values.
    pub fn read_snapshot(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::format(path, m.to_string());
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
        };
        if cur.take(8).ok_or_else(|| bad("truncated header"))? != SNAPSHOT_MAGIC {
            return Err(bad("not a parameter snapshot"));
        }
        let version = cur.u32().ok_or_else(|| bad("truncated header"))?;
        if version != SNAPSHOT_VERSION {
            return Err(bad(&format!("unsupported snapshot version {version}")));
        }
        let n_dims = cur.u32().ok_or_else(|| bad("truncated dims"))? as usize;
        let dims = (0..n_dims)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated dims"))?;
        let n_extras = cur.u32().ok_or_else(|| bad("truncated extras"))? as usize;
        let mut names = Vec::with_capacity(n_extras);
        for _ in 0..n_extras {
            let len = cur.u32().ok_or_else(|| bad("truncated extras"))? as usize;
            let raw = cur.take(len).ok_or_else(|| bad("truncated extras"))?;
            names
                .push(String::from_utf8(raw.to_vec()).map_err(|_| bad("extra name is not UTF-8"))?);
        }
        let count = cur.u64().ok_or_else(|| bad("truncated values"))? as usize;
        let values = (0..count)
            .map(|_| cur.f64())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated values"))?;
        if cur.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let extras: Vec<(String, f64)> = names.into_iter().map(|n| (n, 0.0)).collect();
        let mut params = MlpParams::zeros(&dims, &extras).map_err(|e| bad(&e.to_string()))?;
        params.unflatten(&values).map_err(|e| bad(&e.to_string()))?;
        Ok(params)
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"PINNPARM";
const SNAPSHOT_VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Graph variables holding one copy of an [`MlpParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    input_width: usize,
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
    extras: Vec<(String, NodeId)>,
    activation: Activation,
}

impl BoundParams {
    /// `z_l = σ(z_{l-1} W_lᵀ + b_l)` for hidden layers, affine output layer.
    pub fn forward(&self, graph: &mut Graph, input: NodeId) -> Result<NodeId> {
        let width = graph.node(input)?.value().ncols();
        if width != self.input_width {
            return Err(Error::Shape {
                op: "forward",
                left: graph.value(input).dim(),
                right: (graph.value(input).nrows(), self.input_width),
            });
        }
        let last = self.weights.len() - 1;
        let mut z = input;
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let a = graph.matmul_t(z, w, false, true)?;
            let a = graph.add_bias(a, b)?;
            z = if l < last {
                self.activation.apply(graph, a)?
            } else {
                a
            };
        }
        Ok(z)
    }

    pub fn extra(&self, name: &str) -> Option<NodeId> {
        self.extras
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| id)
    }

    /// Variable ids in the same order as [`MlpParams::flatten`].
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect();
        out.extend(self.extras.iter().map(|&(_, id)| id));
        out
    }
}

/// Concatenates row-major node values, e.g. the gradients returned for
/// [`BoundParams::nodes`], into one flat vector.
pub fn flatten_nodes(graph: &Graph, ids: &[NodeId]) -> Vec<f64> {
    let mut out = Vec::new();
    for &id in ids {
        out.extend(graph.value(id).iter().copied());
    }
    out
}

/// Convenience: binds `params` into `graph` and runs the network on `x`.
pub fn forward(
    params: &MlpParams,
    x: &Array2<f64>,
    activation: Activation,
    graph: &mut Graph,
) -> Result<NodeId> {
    let bound = params.bind(graph, activation)?;
    let input = graph.constant(x.clone())?;
    bound.forward(graph, input)
}

/// Plain evaluation outside any graph the caller keeps.
pub fn predict(params: &MlpParams, x: &Array2<f64>, activation: Activation) -> Result<Array2<f64>> {
    let mut graph = Graph::new();
    let out = forward(params, x, activation, &mut graph)?;
    Ok(graph.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn param_counts() {
        assert_eq!(param_count(&[1, 50, 50, 50, 50, 1]).unwrap(), 7801);
        assert_eq!(param_count(&[2, 100, 100, 100, 100, 2]).unwrap(), 30802);
        assert_eq!(param_count(&[1, 1]).unwrap(), 2);
        assert!(param_count(&[3]).is_err());
        assert!(param_count(&[1, 0, 1]).is_err());
        assert!(glorot_init(&[], &[], 0).is_err());
    }

    #[test]
    fn glorot_is_deterministic_and_bounded() {
        let dims = [1, 50, 50, 50, 50, 1];
        let a = glorot_init(&dims, &[], 1234).unwrap();
        let b = glorot_init(&dims, &[], 1234).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let c = glorot_init(&dims, &[], 1235).unwrap();
        assert_ne!(a.flatten(), c.flatten());

        // √(6/51)
        let bound = glorot_bound(1, 50);
        assert!((bound - 0.3430).abs() < 1e-4);
        assert_eq!(a.weights()[0].len(), 50);
        assert!(a.weights()[0].iter().all(|w| w.abs() <= bound));
        for (l, w) in a.weights().iter().enumerate() {
            let bound = glorot_bound(dims[l], dims[l + 1]);
            assert!(w.iter().all(|v| v.abs() <= bound));
        }
        assert!(a.biases().iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn extras_ride_at_the_end_of_the_flat_vector() {
        let dims = [1, 50, 50, 50, 50, 1];
        let p = glorot_init(&dims, &[("lambda".to_string(), 0.0)], 7).unwrap();
        let flat = p.flatten();
        assert_eq!(flat.len(), param_count(&dims).unwrap() + 1);
        assert_eq!(*flat.last().unwrap(), 0.0);
        assert_eq!(p.extra("lambda"), Some(0.0));
    }

    #[test]
    fn forward_examples() {
        let zero = MlpParams::zeros(&[1, 4, 4, 1], &[]).unwrap();
        let out = predict(&zero, &array![[0.3], [-2.0]], Activation::Tanh).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));

        let affine =
            MlpParams::from_layers(vec![array![[2.0]]], vec![array![3.0]], vec![]).unwrap();
        let out = predict(&affine, &array![[5.0]], Activation::Tanh).unwrap();
        assert_eq!(out[[0, 0]], 13.0);

        // [1,2,1] at x = 0: W2·tanh(b1) + b2
        let p = MlpParams::from_layers(
            vec![array![[0.7], [-1.1]], array![[0.4, -2.0]]],
            vec![array![0.5, -0.25], array![0.1]],
            vec![],
        )
        .unwrap();
        let out = predict(&p, &array![[0.0]], Activation::Tanh).unwrap();
        let expected = 0.4 * 0.5f64.tanh() - 2.0 * (-0.25f64).tanh() + 0.1;
        assert!((out[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let p = MlpParams::zeros(&[2, 3, 1], &[]).unwrap();
        assert!(predict(&p, &array![[1.0]], Activation::Tanh).is_err());
    }

    #[test]
    fn snapshot_round_trip_and_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let p = glorot_init(&[1, 5, 1], &[("lambda".into(), 0.25)], 3).unwrap();
        p.write_snapshot(&path).unwrap();
        assert_eq!(MlpParams::read_snapshot(&path).unwrap(), p);

        std::fs::write(&path, b"PINNPARM\x01").unwrap();
        assert!(matches!(
            MlpParams::read_snapshot(&path),
            Err(Error::Format { .. })
        ));
    }
}
