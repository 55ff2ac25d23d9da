use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const ELEMENTS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca", "Sc",
    "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr",
    "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt",
    "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv",
    "Ts", "Og",
];

fn atomic_number(symbol: &str) -> Option<u8> {
    ELEMENTS.iter().position(|e| *e == symbol).map(|i| i as u8 + 1)
}

/// Normal valences of the organic subset, lowest first.
fn default_valences(z: u8) -> &'static [u8] {
    match z {
        5 => &[3],
        6 => &[4],
        7 => &[3, 5],
        8 => &[2],
        15 => &[3, 5],
        16 => &[2, 4, 6],
        9 | 17 | 35 | 53 => &[1],
        _ => &[],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    /// Element symbol with standard capitalisation (`"Cl"`), even for
    /// aromatic atoms written in lowercase.
    pub element: String,
    pub atomic_number: u8,
    pub aromatic: bool,
    pub charge: i8,
    /// Total attached hydrogens: bracket count, or implied by valence.
    pub hydrogens: u8,
    pub isotope: Option<u16>,
    pub bracket: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl MolGraph {
    /// `(neighbour, order)` pairs per atom.
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.a].push((b.b, b.order));
            adj[b.b].push((b.a, b.order));
        }
        adj
    }

    /// Whether each bond lies on a cycle (i.e. is not a bridge).
    pub fn ring_bonds(&self) -> Vec<bool> {
        let n = self.atoms.len();
        (0..self.bonds.len())
            .map(|skip| {
                let Bond { a, b, .. } = self.bonds[skip];
                let mut adj = vec![Vec::new(); n];
                for (i, e) in self.bonds.iter().enumerate() {
                    if i != skip {
                        adj[e.a].push(e.b);
                        adj[e.b].push(e.a);
                    }
                }
                let mut seen = vec![false; n];
                let mut stack = vec![a];
                seen[a] = true;
                while let Some(u) = stack.pop() {
                    for &v in &adj[u] {
                        if !seen[v] {
                            seen[v] = true;
                            stack.push(v);
                        }
                    }
                }
                seen[b]
            })
            .collect()
    }

    pub fn ring_atoms(&self) -> Vec<bool> {
        let mut out = vec![false; self.atoms.len()];
        for (b, ring) in self.bonds.iter().zip(self.ring_bonds()) {
            if ring {
                out[b.a] = true;
                out[b.b] = true;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesErrorKind {
    #[error("empty SMILES")]
    Empty,
    #[error("unbalanced parenthesis")]
    UnbalancedParen,
    #[error("unclosed ring closure {0}")]
    UnclosedRing(u32),
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(char),
    #[error("invalid bracket atom: {0}")]
    InvalidBracket(String),
    #[error("bond symbol without a following atom")]
    DanglingBond,
    #[error("{0} without a preceding atom")]
    MissingAtom(&'static str),
    #[error("ring closure bonds an atom to itself")]
    SelfBond,
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("ring closure {0} has conflicting bond orders")]
    ConflictingRingBond(u32),
    #[error("empty fragment")]
    EmptyFragment,
}

/// A parse failure at a character position (0-based, in chars).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at position {position}")]
pub struct SmilesError {
    pub position: usize,
    pub kind: SmilesErrorKind,
}

fn err<T>(position: usize, kind: SmilesErrorKind) -> Result<T, SmilesError> {
    Err(SmilesError { position, kind })
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    graph: MolGraph,
    prev: Option<usize>,
    pending: Option<(BondOrder, usize)>,
    branches: Vec<(Option<usize>, usize)>,
    rings: HashMap<u32, (usize, Option<BondOrder>, usize)>,
    fragment_has_atom: bool,
}

/// Parses the supported SMILES subset into a graph with completed hydrogen
/// counts. Stereo marks and atom-map classes are accepted and dropped.
pub fn parse_smiles(s: &str) -> Result<MolGraph, SmilesError> {
    let mut p = Parser {
        chars: s.chars().collect(),
        pos: 0,
        graph: MolGraph::default(),
        prev: None,
        pending: None,
        branches: Vec::new(),
        rings: HashMap::new(),
        fragment_has_atom: false,
    };
    if p.chars.is_empty() {
        return err(0, SmilesErrorKind::Empty);
    }
    p.run()?;
    p.finish()
}

impl Parser {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                'B' | 'C' | 'N' | 'O' | 'P' | 'S' | 'F' | 'I' | 'b' | 'c' | 'n' | 'o' | 'p' | 's' => {
                    self.organic_atom(c)?
                }
                '[' => self.bracket_atom()?,
                '-' | '=' | '#' | ':' | '/' | '\\' => {
                    if self.prev.is_none() {
                        return err(at, SmilesErrorKind::MissingAtom("bond"));
                    }
                    if self.pending.is_some() {
                        return err(at, SmilesErrorKind::DanglingBond);
                    }
                    let order = match c {
                        '=' => BondOrder::Double,
                        '#' => BondOrder::Triple,
                        ':' => BondOrder::Aromatic,
                        _ => BondOrder::Single,
                    };
                    self.pending = Some((order, at));
                    self.pos += 1;
                }
                '(' => {
                    if self.prev.is_none() {
                        return err(at, SmilesErrorKind::MissingAtom("branch"));
                    }
                    if self.pending.is_some() {
                        return err(at, SmilesErrorKind::DanglingBond);
                    }
                    self.branches.push((self.prev, at));
                    self.pos += 1;
                }
                ')' => {
                    if let Some((_, p)) = self.pending {
                        return err(p, SmilesErrorKind::DanglingBond);
                    }
                    let Some((prev, open)) = self.branches.pop() else {
                        return err(at, SmilesErrorKind::UnbalancedParen);
                    };
                    if self.prev == prev {
                        // "()" holds no atoms
                        return err(open, SmilesErrorKind::MissingAtom("branch content"));
                    }
                    self.prev = prev;
                    self.pos += 1;
                }
                '0'..='9' => {
                    self.pos += 1;
                    self.ring_closure(c.to_digit(10).unwrap_or(0), at)?;
                }
                '%' => {
                    let digits: String = self.chars.iter().skip(at + 1).take(2).collect();
                    if digits.len() != 2 || !digits.chars().all(|d| d.is_ascii_digit()) {
                        return err(at, SmilesErrorKind::UnknownSymbol('%'));
                    }
                    self.pos += 3;
                    self.ring_closure(digits.parse().unwrap_or(0), at)?;
                }
                '.' => {
                    if let Some((_, p)) = self.pending {
                        return err(p, SmilesErrorKind::DanglingBond);
                    }
                    if !self.fragment_has_atom {
                        return err(at, SmilesErrorKind::EmptyFragment);
                    }
                    if let Some(&(_, open)) = self.branches.last() {
                        return err(open, SmilesErrorKind::UnbalancedParen);
                    }
                    self.prev = None;
                    self.fragment_has_atom = false;
                    self.pos += 1;
                }
                other => return err(at, SmilesErrorKind::UnknownSymbol(other)),
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<MolGraph, SmilesError> {
        if let Some((_, p)) = self.pending {
            return err(p, SmilesErrorKind::DanglingBond);
        }
        if let Some(&(_, open)) = self.branches.first() {
            return err(open, SmilesErrorKind::UnbalancedParen);
        }
        if let Some((&digit, &(_, _, at))) = self.rings.iter().min_by_key(|(_, v)| v.2) {
            return err(at, SmilesErrorKind::UnclosedRing(digit));
        }
        if !self.fragment_has_atom {
            return err(self.chars.len(), SmilesErrorKind::EmptyFragment);
        }
        self.complete_hydrogens();
        Ok(self.graph)
    }

    fn complete_hydrogens(&mut self) {
        let mut sums = vec![0u32; self.graph.atoms.len()];
        for b in &self.graph.bonds {
            sums[b.a] += b.order.valence() as u32;
            sums[b.b] += b.order.valence() as u32;
        }
        for (atom, sum) in self.graph.atoms.iter_mut().zip(sums) {
            if atom.bracket {
                continue;
            }
            let need = sum + atom.aromatic as u32;
            atom.hydrogens = default_valences(atom.atomic_number)
                .iter()
                .map(|&v| v as u32)
                .find(|&v| v >= need)
                .map_or(0, |v| (v - need) as u8);
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder, at: usize) -> Result<(), SmilesError> {
        if a == b {
            return err(at, SmilesErrorKind::SelfBond);
        }
        if self
            .graph
            .bonds
            .iter()
            .any(|e| (e.a == a && e.b == b) || (e.a == b && e.b == a))
        {
            return err(at, SmilesErrorKind::DuplicateBond(a.min(b), a.max(b)));
        }
        self.graph.bonds.push(Bond { a, b, order });
        Ok(())
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.graph.atoms[a].aromatic && self.graph.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn push_atom(&mut self, atom: Atom, at: usize) -> Result<(), SmilesError> {
        let idx = self.graph.atoms.len();
        self.graph.atoms.push(atom);
        if let Some(prev) = self.prev {
            let order = match self.pending.take() {
                Some((o, _)) => o,
                None => self.default_order(prev, idx),
            };
            self.add_bond(prev, idx, order, at)?;
        }
        self.prev = Some(idx);
        self.fragment_has_atom = true;
        Ok(())
    }

    fn ring_closure(&mut self, digit: u32, at: usize) -> Result<(), SmilesError> {
        let Some(cur) = self.prev else {
            return err(at, SmilesErrorKind::MissingAtom("ring closure"));
        };
        let order = self.pending.take().map(|(o, _)| o);
        match self.rings.remove(&digit) {
            None => {
                self.rings.insert(digit, (cur, order, at));
            }
            Some((other, open_order, _)) => {
                let order = match (open_order, order) {
                    (Some(x), Some(y)) if x != y => return err(at, SmilesErrorKind::ConflictingRingBond(digit)),
                    (Some(x), _) | (None, Some(x)) => x,
                    (None, None) => self.default_order(other, cur),
                };
                self.add_bond(other, cur, order, at)?;
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self, c: char) -> Result<(), SmilesError> {
        let at = self.pos;
        let next = self.chars.get(at + 1).copied();
        let (symbol, len) = match (c, next) {
            ('C', Some('l')) => ("Cl".to_string(), 2),
            ('B', Some('r')) => ("Br".to_string(), 2),
            _ => (c.to_ascii_uppercase().to_string(), 1),
        };
        self.pos += len;
        let atomic_number = atomic_number(&symbol).unwrap_or(0);
        self.push_atom(
            Atom {
                element: symbol,
                atomic_number,
                aromatic: c.is_ascii_lowercase(),
                charge: 0,
                hydrogens: 0,
                isotope: None,
                bracket: false,
            },
            at,
        )
    }

    fn bracket_atom(&mut self) -> Result<(), SmilesError> {
        let open = self.pos;
        let bad = |p: usize, msg: &str| err(p, SmilesErrorKind::InvalidBracket(msg.to_string()));
        self.pos += 1;
        let mut isotope: Option<u32> = None;
        while let Some(d) = self.peek().and_then(|c| c.to_digit(10)) {
            let v = isotope.unwrap_or(0) * 10 + d;
            if v > u16::MAX as u32 {
                return bad(self.pos, "isotope too large");
            }
            isotope = Some(v);
            self.pos += 1;
        }
        let sym_at = self.pos;
        let (element, aromatic) = match self.peek() {
            Some(c) if c.is_ascii_uppercase() => {
                let two: String = self.chars.iter().skip(self.pos).take(2).collect();
                if two.len() == 2 && two.chars().nth(1).is_some_and(|x| x.is_ascii_lowercase()) && atomic_number(&two).is_some() {
                    self.pos += 2;
                    (two, false)
                } else if atomic_number(&c.to_string()).is_some() {
                    self.pos += 1;
                    (c.to_string(), false)
                } else {
                    return bad(sym_at, "unknown element");
                }
            }
            Some(c) if c.is_ascii_lowercase() => {
                let two: String = self.chars.iter().skip(self.pos).take(2).collect();
                if two == "se" || two == "as" {
                    self.pos += 2;
                    let mut s = two.chars();
                    let first = s.next().map(|x| x.to_ascii_uppercase()).unwrap_or('?');
                    (format!("{first}{}", s.as_str()), true)
                } else if "bcnops".contains(c) {
                    self.pos += 1;
                    (c.to_ascii_uppercase().to_string(), true)
                } else {
                    return bad(sym_at, "unknown aromatic element");
                }
            }
            _ => return bad(sym_at, "missing element symbol"),
        };
        while self.peek() == Some('@') {
            self.pos += 1;
        }
        let mut hydrogens = 0u8;
        if self.peek() == Some('H') {
            self.pos += 1;
            hydrogens = 1;
            if let Some(d) = self.peek().and_then(|c| c.to_digit(10)) {
                hydrogens = d as u8;
                self.pos += 1;
            }
        }
        let mut charge: i32 = 0;
        if let Some(sign @ ('+' | '-')) = self.peek() {
            let unit = if sign == '+' { 1 } else { -1 };
            self.pos += 1;
            charge = unit;
            if let Some(d) = self.peek().and_then(|c| c.to_digit(10)) {
                charge = unit * d as i32;
                self.pos += 1;
                if let Some(d2) = self.peek().and_then(|c| c.to_digit(10)) {
                    charge = unit * (d as i32 * 10 + d2 as i32);
                    self.pos += 1;
                }
            } else {
                while self.peek() == Some(sign) {
                    charge += unit;
                    self.pos += 1;
                }
            }
            if charge.abs() > 15 {
                return bad(self.pos, "charge out of range");
            }
        }
        if self.peek() == Some(':') {
            self.pos += 1;
            let start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == start {
                return bad(self.pos, "atom map class without digits");
            }
        }
        match self.peek() {
            Some(']') => self.pos += 1,
            Some(_) => return bad(self.pos, "unexpected character"),
            None => return bad(open, "unterminated bracket"),
        }
        let atomic_number = atomic_number(&element).unwrap_or(0);
        self.push_atom(
            Atom {
                element,
                atomic_number,
                aromatic,
                charge: charge as i8,
                hydrogens,
                isotope: isotope.map(|v| v as u16),
                bracket: true,
            },
            open,
        )
    }
}
