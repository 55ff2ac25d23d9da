use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use super::{Atom, BondOrder, MolGraph};

fn atom_text(a: &Atom) -> String {
    let mut s = String::from("[");
    if let Some(iso) = a.isotope {
        let _ = write!(s, "{iso}");
    }
    if a.aromatic {
        s.push_str(&a.element.to_ascii_lowercase());
    } else {
        s.push_str(&a.element);
    }
    match a.hydrogens {
        0 => {}
        1 => s.push('H'),
        n => {
            let _ = write!(s, "H{n}");
        }
    }
    match a.charge {
        0 => {}
        c if c > 0 => {
            let _ = write!(s, "+{c}");
        }
        c => {
            let _ = write!(s, "-{}", -c);
        }
    }
    s.push(']');
    s
}

fn bond_text(o: BondOrder) -> &'static str {
    match o {
        BondOrder::Single => "-",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic => ":",
    }
}

fn ring_label(n: usize) -> String {
    if n < 10 {
        n.to_string()
    } else {
        format!("%{n:02}")
    }
}

/// Writes a SMILES string that reparses to the same graph.
///
/// Components are emitted in order of their lowest atom index, each by a
/// depth-first walk that visits neighbours in bond order. Every atom is
/// bracketed with its hydrogen count and every bond symbol is explicit, so
/// no valence or aromaticity inference is needed on the way back. The
/// output is not canonical.
pub fn write_smiles(g: &MolGraph) -> String {
    let n = g.atoms.len();
    let mut w = Writer {
        g,
        adj: g.adjacency(),
        parent: vec![None; n],
        rank: vec![usize::MAX; n],
        next_rank: 0,
        open: BTreeMap::new(),
        used: BTreeSet::new(),
        out: String::new(),
    };
    let mut roots = Vec::new();
    for a in 0..n {
        if w.rank[a] == usize::MAX {
            roots.push(a);
            w.number(a);
        }
    }
    for (i, &r) in roots.iter().enumerate() {
        if i > 0 {
            w.out.push('.');
        }
        w.emit(r, None);
    }
    w.out
}

struct Writer<'a> {
    g: &'a MolGraph,
    adj: Vec<Vec<(usize, BondOrder)>>,
    parent: Vec<Option<usize>>,
    rank: Vec<usize>,
    next_rank: usize,
    open: BTreeMap<(usize, usize), usize>,
    used: BTreeSet<usize>,
    out: String,
}

impl Writer<'_> {
    fn number(&mut self, u: usize) {
        self.rank[u] = self.next_rank;
        self.next_rank += 1;
        for i in 0..self.adj[u].len() {
            let v = self.adj[u][i].0;
            if self.rank[v] == usize::MAX {
                self.parent[v] = Some(u);
                self.number(v);
            }
        }
    }

    fn emit(&mut self, u: usize, via: Option<BondOrder>) {
        if let Some(o) = via {
            self.out.push_str(bond_text(o));
        }
        self.out.push_str(&atom_text(&self.g.atoms[u]));
        let mut children = Vec::new();
        for i in 0..self.adj[u].len() {
            let (v, o) = self.adj[u][i];
            if self.parent[v] == Some(u) {
                children.push((v, o));
                continue;
            }
            if self.parent[u] == Some(v) {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if self.rank[v] < self.rank[u] {
                let label = self.open.remove(&key).unwrap_or(0);
                self.used.remove(&label);
                self.out.push_str(bond_text(o));
                self.out.push_str(&ring_label(label));
            } else {
                let label = (1..).find(|l| !self.used.contains(l)).unwrap_or(1);
                self.used.insert(label);
                self.open.insert(key, label);
                self.out.push_str(&ring_label(label));
            }
        }
        let last = children.len().saturating_sub(1);
        for (i, (v, o)) in children.into_iter().enumerate() {
            if i < last {
                self.out.push('(');
                self.emit(v, Some(o));
                self.out.push(')');
            } else {
                self.emit(v, Some(o));
            }
        }
    }
}
