//! General nodal analysis used to cross-check the closed-form divider model.

use nalgebra::{DMatrix, DVector};

use super::{BusError, BusTopology, TapId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkNode {
    Ground,
    Node(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resistor {
    pub a: NetworkNode,
    pub b: NetworkNode,
    pub ohms: f64,
}

/// Resistor network driven by one ideal voltage source between a node and ground.
#[derive(Debug, Clone, Default)]
pub struct ResistorNetwork {
    pub node_count: usize,
    pub resistors: Vec<Resistor>,
}

impl ResistorNetwork {
    pub fn add(&mut self, a: NetworkNode, b: NetworkNode, ohms: f64) {
        self.resistors.push(Resistor { a, b, ohms });
    }

    /// Solves for every node voltage with `source` held at `volts`.
    ///
    /// Every node must be connected (through resistors) to ground or to the
    /// source; otherwise its voltage is undetermined.
    pub fn solve(&self, source: usize, volts: f64) -> Result<Vec<f64>, BusError> {
        let n = self.node_count;
        if source >= n {
            return Err(BusError::Singular(format!("source node {source} does not exist")));
        }
        for r in &self.resistors {
            if !(r.ohms.is_finite() && r.ohms > 0.0) {
                return Err(BusError::NonPositive {
                    name: "resistor",
                    value: r.ohms,
                });
            }
        }
        self.check_connected(source)?;

        // Unknowns are all nodes except the source.
        let unknown: Vec<Option<usize>> = {
            let mut k = 0;
            (0..n)
                .map(|i| {
                    (i != source).then(|| {
                        k += 1;
                        k - 1
                    })
                })
                .collect()
        };
        let m = n - 1;
        let mut g = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for r in &self.resistors {
            let cond = 1.0 / r.ohms;
            let idx = |node: NetworkNode| match node {
                NetworkNode::Ground => Terminal::Ground,
                NetworkNode::Node(i) if i == source => Terminal::Source,
                NetworkNode::Node(i) => Terminal::Unknown(unknown[i].expect("non-source node")),
            };
            let (ta, tb) = (idx(r.a), idx(r.b));
            for (this, other) in [(ta, tb), (tb, ta)] {
                if let Terminal::Unknown(row) = this {
                    g[(row, row)] += cond;
                    match other {
                        Terminal::Unknown(col) => g[(row, col)] -= cond,
                        Terminal::Source => rhs[row] += cond * volts,
                        Terminal::Ground => {}
                    }
                }
            }
        }
        let solution = g
            .lu()
            .solve(&rhs)
            .ok_or_else(|| BusError::Singular("conductance matrix is not invertible".into()))?;
        Ok((0..n)
            .map(|i| match unknown[i] {
                None => volts,
                Some(k) => solution[k],
            })
            .collect())
    }

    fn check_connected(&self, source: usize) -> Result<(), BusError> {
        let n = self.node_count;
        // Node n stands for ground.
        let mut adjacency = vec![Vec::new(); n + 1];
        let id = |node: NetworkNode| match node {
            NetworkNode::Ground => n,
            NetworkNode::Node(i) => i,
        };
        for r in &self.resistors {
            let (a, b) = (id(r.a), id(r.b));
            if a > n || b > n {
                return Err(BusError::Singular(format!("resistor references missing node {}", a.max(b))));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let mut seen = vec![false; n + 1];
        let mut stack = vec![n, source];
        while let Some(v) = stack.pop() {
            if std::mem::replace(&mut seen[v], true) {
                continue;
            }
            stack.extend(adjacency[v].iter().copied().filter(|&w| !seen[w]));
        }
        match seen[..n].iter().position(|&s| !s) {
            Some(floating) => Err(BusError::Singular(format!("node {floating} is floating"))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy)]
enum Terminal {
    Ground,
    Source,
    Unknown(usize),
}

/// Node voltages of the trunk for one transmitting tap.
#[derive(Debug, Clone)]
pub struct NodalSolution {
    /// Node positions along the trunk (meters), ascending.
    pub positions: Vec<f64>,
    pub volts: Vec<f64>,
    pub sp_a_node: usize,
    pub sp_b_node: usize,
}

impl NodalSolution {
    pub fn v_sp_a(&self) -> f64 {
        self.volts[self.sp_a_node]
    }

    pub fn v_sp_b(&self) -> f64 {
        self.volts[self.sp_b_node]
    }

    pub fn ratio(&self) -> f64 {
        self.v_sp_a() / self.v_sp_b()
    }
}

/// Builds the full trunk (sampling points plus every tap as a node, tails to
/// ground) and solves it with an ideal source at `tap`.
pub fn nodal_solve(topology: &BusTopology, tap: TapId, drive_v: f64) -> Result<NodalSolution, BusError> {
    let source_pos = topology.tap_position(tap)?;
    let (sp_a, sp_b) = topology.sp_positions();
    let mut positions: Vec<f64> = topology.taps().to_vec();
    positions.push(sp_a);
    positions.push(sp_b);
    positions.sort_by(f64::total_cmp);
    positions.dedup();

    let node_of = |x: f64| {
        positions
            .binary_search_by(|p| p.total_cmp(&x))
            .expect("position was inserted")
    };
    let mut net = ResistorNetwork {
        node_count: positions.len(),
        resistors: Vec::with_capacity(positions.len() + 1),
    };
    for (i, pair) in positions.windows(2).enumerate() {
        net.add(
            NetworkNode::Node(i),
            NetworkNode::Node(i + 1),
            topology.ohms_per_meter() * (pair[1] - pair[0]),
        );
    }
    let (r_k, r_l) = topology.tails();
    let (sp_a_node, sp_b_node) = (node_of(sp_a), node_of(sp_b));
    net.add(NetworkNode::Node(sp_a_node), NetworkNode::Ground, r_k);
    net.add(NetworkNode::Node(sp_b_node), NetworkNode::Ground, r_l);

    let volts = net.solve(node_of(source_pos), drive_v)?;
    Ok(NodalSolution {
        positions,
        volts,
        sp_a_node,
        sp_b_node,
    })
}
