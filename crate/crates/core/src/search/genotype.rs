//! Discrete encoder description: per-edge operations plus the decoded
//! resolution path, serializable as plain text.

use crate::error::{Error, Result};

/// Candidate edge operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Skip,
    Conv3,
    Conv5,
}

impl OpKind {
    pub const ALL: [OpKind; 3] = [OpKind::Skip, OpKind::Conv3, OpKind::Conv5];

    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Skip => "skip",
            OpKind::Conv3 => "conv3",
            OpKind::Conv5 => "conv5",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "skip" => Ok(OpKind::Skip),
            "conv3" => Ok(OpKind::Conv3),
            "conv5" => Ok(OpKind::Conv5),
            other => Err(Error::Config(format!("unknown edge op '{other}'"))),
        }
    }
}

/// Base downsample rate of the trellis entry level (after the stems).
pub const BASE_RATE: u32 = 4;

/// A searched encoder architecture. Each layer holds one cell of
/// `nodes` spiking nodes; node `j` receives one edge from each of the two
/// input taps (previous layer, layer before that). `path[l]` is the
/// cumulative downsample rate of layer `l` (4, 8, 16, or 32), stepping by
/// at most a factor of two between layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Genotype {
    /// `edges[layer][node][tap]`, tap 0 = previous layer, tap 1 = the layer
    /// before that.
    pub edges: Vec<Vec<[OpKind; 2]>>,
    pub path: Vec<u32>,
    pub seed: u64,
    pub epoch: usize,
}

impl Genotype {
    pub fn layers(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes_per_cell(&self) -> usize {
        self.edges.first().map(|n| n.len()).unwrap_or(0)
    }

    /// Uniform genotype: every edge `op`, constant resolution at the base
    /// rate.
    pub fn uniform(layers: usize, nodes: usize, op: OpKind) -> Self {
        Genotype {
            edges: vec![vec![[op, op]; nodes]; layers],
            path: vec![BASE_RATE; layers],
            seed: 0,
            epoch: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.is_empty() {
            return Err(Error::Config("genotype has no layers".into()));
        }
        if self.path.len() != self.edges.len() {
            return Err(Error::Config(format!(
                "genotype path length {} does not match {} layers",
                self.path.len(),
                self.edges.len()
            )));
        }
        let nodes = self.nodes_per_cell();
        if nodes == 0 || self.edges.iter().any(|l| l.len() != nodes) {
            return Err(Error::Config("genotype cells must share a positive node count".into()));
        }
        let mut prev = BASE_RATE;
        for (l, r) in self.path.iter().enumerate() {
            if !r.is_power_of_two() || *r < BASE_RATE || *r > BASE_RATE * 8 {
                return Err(Error::Config(format!("layer {l}: invalid downsample rate {r}")));
            }
            let ratio = if *r > prev { *r / prev } else { prev / *r };
            if ratio > 2 {
                return Err(Error::Config(format!(
                    "layer {l}: resolution jump {prev} -> {r} exceeds one level"
                )));
            }
            prev = *r;
        }
        Ok(())
    }

    /// Renders the text format: one line per edge, then the path and
    /// metadata lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (l, cell) in self.edges.iter().enumerate() {
            for (n, taps) in cell.iter().enumerate() {
                for (t, op) in taps.iter().enumerate() {
                    out.push_str(&format!("cell/{l}/{n}/{t}: {}\n", op.name()));
                }
            }
        }
        let rates: Vec<String> = self.path.iter().map(|r| r.to_string()).collect();
        out.push_str(&format!("path: {}\n", rates.join(",")));
        out.push_str(&format!("seed={}\n", self.seed));
        out.push_str(&format!("epoch={}\n", self.epoch));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut edges: Vec<Vec<[OpKind; 2]>> = Vec::new();
        let mut path = Vec::new();
        let mut seed = 0u64;
        let mut epoch = 0usize;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| Error::Config(format!("genotype line {}: {m}", lineno + 1));
            if let Some(rest) = line.strip_prefix("cell/") {
                let (addr, op) =
                    rest.split_once(':').ok_or_else(|| bad("expected 'cell/l/n/t: op'"))?;
                let mut it = addr.trim().split('/');
                let l: usize = it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("bad layer index"))?;
                let n: usize = it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("bad node index"))?;
                let t: usize = it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("bad tap index"))?;
                if t > 1 {
                    return Err(bad("tap index must be 0 or 1"));
                }
                let op = OpKind::parse(op.trim())?;
                if edges.len() <= l {
                    edges.resize(l + 1, Vec::new());
                }
                if edges[l].len() <= n {
                    edges[l].resize(n + 1, [OpKind::Skip, OpKind::Skip]);
                }
                edges[l][n][t] = op;
            } else if let Some(rest) = line.strip_prefix("path:") {
                for part in rest.trim().split(',') {
                    path.push(
                        part.trim().parse().map_err(|_| bad("bad downsample rate in path"))?,
                    );
                }
            } else if let Some(rest) = line.strip_prefix("seed=") {
                seed = rest.trim().parse().map_err(|_| bad("bad seed"))?;
            } else if let Some(rest) = line.strip_prefix("epoch=") {
                epoch = rest.trim().parse().map_err(|_| bad("bad epoch"))?;
            } else {
                return Err(bad("unrecognized line"));
            }
        }
        let g = Genotype { edges, path, seed, epoch };
        g.validate()?;
        Ok(g)
    }
}
