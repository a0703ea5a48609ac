//! A line-oriented trace language: loop nests over arrays whose execution
//! produces a memory-access stream and a list of emitted values.
//!
//! ```text
//! # comment
//! param n                 runtime integer bound from the test input
//! array A 16384 4         name, element count, element size in bytes
//! loop i 0 n              i = 0 .. n-1; bounds are space-free affine exprs
//! load A[i*128+j]         acc += A[...]
//! store A[i]              A[...] = acc
//! emit acc + 1            output one value
//! end
//! ```
//!
//! Every statement occupies exactly one line. Index and bound expressions must
//! be affine in loop variables and parameters; `emit` may also use `acc`.
//! Arrays are laid out contiguously in declaration order, each base aligned to
//! 64 bytes, starting at address 0. Initial cell contents derive from the
//! `seed` input binding (0 if absent).

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use thiserror::Error;

use super::{Access, AccessKind};

const ARRAY_ALIGN: u64 = 64;
const ACC: &str = "acc";
const KEYWORDS: [&str; 7] = ["param", "array", "loop", "end", "load", "store", "emit"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct DslError {
    pub line: usize,
    pub kind: DslErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslErrorKind {
    #[error("unknown statement `{0}`")]
    UnknownStatement(String),
    #[error("malformed statement: {0}")]
    Syntax(String),
    #[error("malformed literal `{0}`")]
    Literal(String),
    #[error("unbalanced `end`")]
    UnbalancedEnd,
    #[error("loop opened here is never closed")]
    UnclosedLoop,
    #[error("undeclared array `{0}`")]
    UndeclaredArray(String),
    #[error("undeclared variable `{0}`")]
    UndeclaredVariable(String),
    #[error("`{0}` is already declared")]
    Redeclared(String),
    #[error("`{0}` is a reserved word")]
    Reserved(String),
    #[error("non-affine expression `{0}`")]
    NonAffine(String),
    #[error("`acc` is only allowed in emit")]
    AccInIndex,
    #[error("declarations must appear outside loops")]
    DeclarationInLoop,
    #[error("element size must be 1 to 8 bytes, got {0}")]
    ElementSize(u64),
    #[error("constant overflow")]
    Overflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("parameter `{0}` is not bound by the input")]
    Unbound(String),
    #[error("malformed input binding `{0}`")]
    BadBinding(String),
    #[error("line {line}: index {index} out of bounds for `{array}` (length {len})")]
    OutOfBounds {
        line: usize,
        array: String,
        index: i64,
        len: u64,
    },
    #[error("line {line}: arithmetic overflow")]
    Overflow { line: usize },
    #[error("access limit of {0} exceeded")]
    AccessLimit(u64),
}

/// Integer-linear expression `constant + sum(coef * var) + acc_coef * acc`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct Affine {
    constant: i64,
    terms: Vec<(usize, i64)>,
    acc: i64,
}

impl Affine {
    fn constant(c: i64) -> Self {
        Self {
            constant: c,
            ..Self::default()
        }
    }

    fn is_constant(&self) -> bool {
        self.terms.is_empty() && self.acc == 0
    }

    fn add(mut self, other: &Affine, sign: i64) -> Option<Self> {
        self.constant = self.constant.checked_add(other.constant.checked_mul(sign)?)?;
        self.acc = self.acc.checked_add(other.acc.checked_mul(sign)?)?;
        for &(slot, coef) in &other.terms {
            let coef = coef.checked_mul(sign)?;
            match self.terms.iter_mut().find(|(s, _)| *s == slot) {
                Some((_, c)) => *c = c.checked_add(coef)?,
                None => self.terms.push((slot, coef)),
            }
        }
        self.normalize();
        Some(self)
    }

    fn scale(mut self, k: i64) -> Option<Self> {
        self.constant = self.constant.checked_mul(k)?;
        self.acc = self.acc.checked_mul(k)?;
        for (_, c) in &mut self.terms {
            *c = c.checked_mul(k)?;
        }
        self.normalize();
        Some(self)
    }

    fn normalize(&mut self) {
        self.terms.retain(|&(_, c)| c != 0);
        self.terms.sort_unstable();
    }

    #[inline]
    fn eval(&self, vars: &[i64], acc: i64) -> Option<i64> {
        let mut v = self.constant;
        for &(slot, coef) in &self.terms {
            v = v.checked_add(coef.checked_mul(vars[slot])?)?;
        }
        if self.acc != 0 {
            v = v.checked_add(self.acc.checked_mul(acc)?)?;
        }
        Some(v)
    }
}

impl fmt::Display for Affine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.constant)?;
        for (slot, coef) in &self.terms {
            write!(f, "{coef:+}v{slot}")?;
        }
        if self.acc != 0 {
            write!(f, "{:+}acc", self.acc)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ArrayDecl {
    name: String,
    len: u64,
    elem_size: u8,
    base: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Instr {
    Loop {
        var: usize,
        lo: Affine,
        hi: Affine,
        end: usize,
    },
    End {
        start: usize,
    },
    Mem {
        kind: AccessKind,
        array: usize,
        index: Affine,
    },
    Emit(Affine),
}

/// A parsed, resolved trace program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceProgram {
    params: Vec<String>,
    arrays: Vec<ArrayDecl>,
    num_loops: usize,
    code: Vec<Instr>,
    lines: Vec<usize>,
}

/// Runtime values for declared parameters, plus the `seed` that fills arrays.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings(pub BTreeMap<String, i64>);

impl Bindings {
    /// Parses `name=value` pairs separated by whitespace or commas.
    pub fn parse(text: &str) -> Result<Self, RuntimeError> {
        let mut map = BTreeMap::new();
        for item in text
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
        {
            let (name, value) = item
                .split_once('=')
                .ok_or_else(|| RuntimeError::BadBinding(item.to_string()))?;
            let value: i64 = value
                .trim()
                .parse()
                .map_err(|_| RuntimeError::BadBinding(item.to_string()))?;
            map.insert(name.trim().to_string(), value);
        }
        Ok(Self(map))
    }

    pub fn with(mut self, name: &str, value: i64) -> Self {
        self.0.insert(name.to_string(), value);
        self
    }

    fn seed(&self) -> u64 {
        self.0.get("seed").copied().unwrap_or(0) as u64
    }
}

impl TraceProgram {
    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn array_names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|a| a.name.as_str())
    }

    /// Base address of each array, in declaration order.
    pub fn array_bases(&self) -> Vec<(String, u64)> {
        self.arrays.iter().map(|a| (a.name.clone(), a.base)).collect()
    }

    /// Canonical serialization of the resolved program. Programs that differ
    /// only in layout, comments or loop-variable names serialize identically.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        for p in &self.params {
            let _ = writeln!(out, "P {p}");
        }
        for a in &self.arrays {
            let _ = writeln!(out, "A {} {}", a.len, a.elem_size);
        }
        for instr in &self.code {
            let _ = match instr {
                Instr::Loop { var, lo, hi, .. } => writeln!(out, "L v{var} {lo} {hi}"),
                Instr::End { .. } => writeln!(out, "E"),
                Instr::Mem { kind, array, index } => {
                    let k = if *kind == AccessKind::Read { 'R' } else { 'W' };
                    writeln!(out, "{k} a{array} {index}")
                }
                Instr::Emit(e) => writeln!(out, "O {e}"),
            };
        }
        out.into_bytes()
    }

    /// Executes the program, feeding every memory access to `sink`.
    ///
    /// Non-memory work is bounded too: more than `16 * access_limit + 1024`
    /// executed statements is reported as [`RuntimeError::AccessLimit`].
    pub fn execute<F>(&self, bindings: &Bindings, access_limit: u64, mut sink: F) -> Execution
    where
        F: FnMut(Access),
    {
        let mut emitted = Vec::new();
        let outcome = self.execute_inner(bindings, access_limit, &mut sink, &mut emitted);
        Execution { emitted, outcome }
    }

    fn execute_inner<F>(
        &self,
        bindings: &Bindings,
        access_limit: u64,
        sink: &mut F,
        emitted: &mut Vec<i64>,
    ) -> Result<(), RuntimeError>
    where
        F: FnMut(Access),
    {
        let nparams = self.params.len();
        let mut vars = vec![0i64; nparams + self.num_loops];
        for (slot, name) in self.params.iter().enumerate() {
            vars[slot] = *bindings
                .0
                .get(name)
                .ok_or_else(|| RuntimeError::Unbound(name.clone()))?;
        }
        let mut limits = vec![0i64; self.num_loops];
        let seed = bindings.seed();
        let mut cells: Vec<Vec<i64>> = self
            .arrays
            .iter()
            .enumerate()
            .map(|(ord, a)| (0..a.len).map(|i| initial_cell(seed, ord as u64, i)).collect())
            .collect();

        let op_limit = access_limit.saturating_mul(16).saturating_add(1024);
        let mut ops = 0u64;
        let mut accesses = 0u64;
        let mut acc = 0i64;
        let mut pc = 0;
        while pc < self.code.len() {
            ops += 1;
            if ops > op_limit {
                return Err(RuntimeError::AccessLimit(access_limit));
            }
            let line = self.lines[pc];
            let overflow = || RuntimeError::Overflow { line };
            match &self.code[pc] {
                Instr::Loop { var, lo, hi, end } => {
                    let lo = lo.eval(&vars, acc).ok_or_else(overflow)?;
                    let hi = hi.eval(&vars, acc).ok_or_else(overflow)?;
                    if lo >= hi {
                        pc = end + 1;
                        continue;
                    }
                    vars[nparams + var] = lo;
                    limits[*var] = hi;
                }
                Instr::End { start } => {
                    let Instr::Loop { var, .. } = &self.code[*start] else {
                        unreachable!("end always refers to a loop")
                    };
                    let slot = nparams + var;
                    vars[slot] += 1;
                    if vars[slot] < limits[*var] {
                        pc = start + 1;
                        continue;
                    }
                }
                Instr::Mem { kind, array, index } => {
                    let decl = &self.arrays[*array];
                    let idx = index.eval(&vars, acc).ok_or_else(overflow)?;
                    if idx < 0 || idx as u64 >= decl.len {
                        return Err(RuntimeError::OutOfBounds {
                            line,
                            array: decl.name.clone(),
                            index: idx,
                            len: decl.len,
                        });
                    }
                    accesses += 1;
                    if accesses > access_limit {
                        return Err(RuntimeError::AccessLimit(access_limit));
                    }
                    sink(Access {
                        kind: *kind,
                        address: decl.base + idx as u64 * u64::from(decl.elem_size),
                        size: decl.elem_size,
                    });
                    let cell = &mut cells[*array][idx as usize];
                    match kind {
                        AccessKind::Read => acc = acc.wrapping_add(*cell),
                        AccessKind::Write => *cell = acc,
                    }
                }
                Instr::Emit(expr) => emitted.push(expr.eval(&vars, acc).ok_or_else(overflow)?),
            }
            pc += 1;
        }
        Ok(())
    }
}

/// Result of [`TraceProgram::execute`]; `emitted` holds whatever was produced
/// before an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub emitted: Vec<i64>,
    pub outcome: Result<(), RuntimeError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRun {
    pub emitted: Vec<i64>,
    pub accesses: Vec<Access>,
}

pub fn run_trace_program(
    program: &TraceProgram,
    bindings: &Bindings,
    access_limit: u64,
) -> Result<TraceRun, RuntimeError> {
    let mut accesses = Vec::new();
    let exec = program.execute(bindings, access_limit, |a| accesses.push(a));
    exec.outcome.map(|()| TraceRun {
        emitted: exec.emitted,
        accesses,
    })
}

fn initial_cell(seed: u64, array: u64, index: u64) -> i64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(array << 40)
        .wrapping_add(index);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z & 0xFFFF) as i64
}

struct Parser {
    params: Vec<String>,
    arrays: Vec<ArrayDecl>,
    array_index: HashMap<String, usize>,
    // (name, slot) for parameters and loop variables in scope
    scope: Vec<(String, usize)>,
    open: Vec<usize>,
    code: Vec<Instr>,
    lines: Vec<usize>,
    num_loops: usize,
    next_base: u64,
}

pub fn parse_trace_program(text: &str) -> Result<TraceProgram, DslError> {
    let mut p = Parser {
        params: Vec::new(),
        arrays: Vec::new(),
        array_index: HashMap::new(),
        scope: Vec::new(),
        open: Vec::new(),
        code: Vec::new(),
        lines: Vec::new(),
        num_loops: 0,
        next_base: 0,
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let stmt = raw.split('#').next().unwrap_or("").trim();
        if stmt.is_empty() {
            continue;
        }
        p.statement(stmt).map_err(|kind| DslError { line: line_no, kind })?;
        while p.lines.len() < p.code.len() {
            p.lines.push(line_no);
        }
    }
    if let Some(&start) = p.open.last() {
        return Err(DslError {
            line: p.lines[start],
            kind: DslErrorKind::UnclosedLoop,
        });
    }
    // Loop variable slots follow the parameters.
    let nparams = p.params.len();
    for instr in &mut p.code {
        let fix = |a: &mut Affine| {
            for (slot, _) in &mut a.terms {
                if *slot >= LOOP_SLOT_BASE {
                    *slot = *slot - LOOP_SLOT_BASE + nparams;
                }
            }
            a.normalize();
        };
        match instr {
            Instr::Loop { lo, hi, .. } => {
                fix(lo);
                fix(hi);
            }
            Instr::Mem { index, .. } => fix(index),
            Instr::Emit(e) => fix(e),
            Instr::End { .. } => {}
        }
    }
    Ok(TraceProgram {
        params: p.params,
        arrays: p.arrays,
        num_loops: p.num_loops,
        code: p.code,
        lines: p.lines,
    })
}

// Loop slots are provisional until all params are known.
const LOOP_SLOT_BASE: usize = usize::MAX / 2;

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_u64(s: &str) -> Result<u64, DslErrorKind> {
    s.parse().map_err(|_| DslErrorKind::Literal(s.to_string()))
}

impl Parser {
    fn statement(&mut self, stmt: &str) -> Result<(), DslErrorKind> {
        let (keyword, rest) = match stmt.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (stmt, ""),
        };
        match keyword {
            "param" => self.param(rest),
            "array" => self.array(rest),
            "loop" => self.loop_header(rest),
            "end" => self.end(rest),
            "load" => self.mem(AccessKind::Read, rest),
            "store" => self.mem(AccessKind::Write, rest),
            "emit" => {
                let expr = self.expr(rest, true)?;
                self.code.push(Instr::Emit(expr));
                Ok(())
            }
            other => Err(DslErrorKind::UnknownStatement(other.to_string())),
        }
    }

    fn check_new_name(&self, name: &str) -> Result<(), DslErrorKind> {
        if !is_ident(name) {
            return Err(DslErrorKind::Syntax(format!("`{name}` is not an identifier")));
        }
        if name == ACC || KEYWORDS.contains(&name) {
            return Err(DslErrorKind::Reserved(name.to_string()));
        }
        if self.scope.iter().any(|(n, _)| n == name) || self.array_index.contains_key(name) {
            return Err(DslErrorKind::Redeclared(name.to_string()));
        }
        Ok(())
    }

    fn param(&mut self, rest: &str) -> Result<(), DslErrorKind> {
        if !self.open.is_empty() {
            return Err(DslErrorKind::DeclarationInLoop);
        }
        let mut it = rest.split_whitespace();
        let (Some(name), None) = (it.next(), it.next()) else {
            return Err(DslErrorKind::Syntax("expected `param <name>`".into()));
        };
        self.check_new_name(name)?;
        self.scope.push((name.to_string(), self.params.len()));
        self.params.push(name.to_string());
        Ok(())
    }

    fn array(&mut self, rest: &str) -> Result<(), DslErrorKind> {
        if !self.open.is_empty() {
            return Err(DslErrorKind::DeclarationInLoop);
        }
        let fields: Vec<&str> = rest.split_whitespace().collect();
        let [name, len, elem] = fields[..] else {
            return Err(DslErrorKind::Syntax("expected `array <name> <length> <element size>`".into()));
        };
        self.check_new_name(name)?;
        let len = parse_u64(len)?;
        let elem = parse_u64(elem)?;
        if !(1..=8).contains(&elem) {
            return Err(DslErrorKind::ElementSize(elem));
        }
        let base = self.next_base;
        let bytes = len.checked_mul(elem).ok_or(DslErrorKind::Overflow)?;
        self.next_base = base
            .checked_add(bytes)
            .and_then(|e| e.checked_next_multiple_of(ARRAY_ALIGN))
            .ok_or(DslErrorKind::Overflow)?;
        self.array_index.insert(name.to_string(), self.arrays.len());
        self.arrays.push(ArrayDecl {
            name: name.to_string(),
            len,
            elem_size: elem as u8,
            base,
        });
        Ok(())
    }

    fn loop_header(&mut self, rest: &str) -> Result<(), DslErrorKind> {
        let fields: Vec<&str> = rest.split_whitespace().collect();
        let [var, lo, hi] = fields[..] else {
            return Err(DslErrorKind::Syntax("expected `loop <var> <lo> <hi>`".into()));
        };
        self.check_new_name(var)?;
        let lo = self.expr(lo, false)?;
        let hi = self.expr(hi, false)?;
        let slot = self.num_loops;
        self.num_loops += 1;
        self.scope.push((var.to_string(), LOOP_SLOT_BASE + slot));
        self.open.push(self.code.len());
        self.code.push(Instr::Loop {
            var: slot,
            lo,
            hi,
            end: usize::MAX,
        });
        Ok(())
    }

    fn end(&mut self, rest: &str) -> Result<(), DslErrorKind> {
        if !rest.is_empty() {
            return Err(DslErrorKind::Syntax("`end` takes no arguments".into()));
        }
        let start = self.open.pop().ok_or(DslErrorKind::UnbalancedEnd)?;
        let end_pc = self.code.len();
        if let Instr::Loop { end, .. } = &mut self.code[start] {
            *end = end_pc;
        }
        self.scope.pop();
        self.code.push(Instr::End { start });
        Ok(())
    }

    fn mem(&mut self, kind: AccessKind, rest: &str) -> Result<(), DslErrorKind> {
        let malformed = || DslErrorKind::Syntax("expected `<array>[<index>]`".into());
        let (name, tail) = rest.split_once('[').ok_or_else(malformed)?;
        let inner = tail.trim_end().strip_suffix(']').ok_or_else(malformed)?;
        let name = name.trim();
        let array = *self
            .array_index
            .get(name)
            .ok_or_else(|| DslErrorKind::UndeclaredArray(name.to_string()))?;
        let index = self.expr(inner, false)?;
        self.code.push(Instr::Mem { kind, array, index });
        Ok(())
    }

    fn expr(&self, text: &str, allow_acc: bool) -> Result<Affine, DslErrorKind> {
        let tokens = tokenize(text)?;
        let mut ep = ExprParser {
            tokens: &tokens,
            pos: 0,
            scope: &self.scope,
            allow_acc,
            text,
        };
        let e = ep.sum()?;
        if ep.pos != tokens.len() {
            return Err(DslErrorKind::Syntax(format!("unexpected input in `{text}`")));
        }
        Ok(e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Num(i64),
    Ident(String),
    Op(char),
}

fn tokenize(text: &str) -> Result<Vec<Tok>, DslErrorKind> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            let lit: String = chars[start..i].iter().collect();
            out.push(Tok::Num(lit.parse().map_err(|_| DslErrorKind::Literal(lit))?));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(DslErrorKind::Syntax(format!("unexpected character `{c}`")));
        }
    }
    if out.is_empty() {
        return Err(DslErrorKind::Syntax("empty expression".into()));
    }
    Ok(out)
}

struct ExprParser<'a> {
    tokens: &'a [Tok],
    pos: usize,
    scope: &'a [(String, usize)],
    allow_acc: bool,
    text: &'a str,
}

impl ExprParser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Tok::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn sum(&mut self) -> Result<Affine, DslErrorKind> {
        let mut acc = self.product()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.product()?;
            let sign = if op == '+' { 1 } else { -1 };
            acc = acc.add(&rhs, sign).ok_or(DslErrorKind::Overflow)?;
        }
        Ok(acc)
    }

    fn product(&mut self) -> Result<Affine, DslErrorKind> {
        let mut acc = self.factor()?;
        while self.peek_op() == Some('*') {
            self.pos += 1;
            let rhs = self.factor()?;
            acc = if rhs.is_constant() {
                acc.scale(rhs.constant)
            } else if acc.is_constant() {
                rhs.scale(acc.constant)
            } else {
                return Err(DslErrorKind::NonAffine(self.text.to_string()));
            }
            .ok_or(DslErrorKind::Overflow)?;
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Affine, DslErrorKind> {
        let tok = self
            .tokens
            .get(self.pos)
            .ok_or_else(|| DslErrorKind::Syntax(format!("truncated expression `{}`", self.text)))?;
        self.pos += 1;
        match tok {
            Tok::Num(n) => Ok(Affine::constant(*n)),
            Tok::Ident(name) if name == ACC => {
                if !self.allow_acc {
                    return Err(DslErrorKind::AccInIndex);
                }
                Ok(Affine {
                    acc: 1,
                    ..Affine::default()
                })
            }
            Tok::Ident(name) => {
                let slot = self
                    .scope
                    .iter()
                    .rev()
                    .find(|(n, _)| n == name)
                    .map(|(_, s)| *s)
                    .ok_or_else(|| DslErrorKind::UndeclaredVariable(name.clone()))?;
                Ok(Affine {
                    terms: vec![(slot, 1)],
                    ..Affine::default()
                })
            }
            Tok::Op('-') => self.factor()?.scale(-1).ok_or(DslErrorKind::Overflow),
            Tok::Op('(') => {
                let inner = self.sum()?;
                if self.peek_op() != Some(')') {
                    return Err(DslErrorKind::Syntax(format!("missing `)` in `{}`", self.text)));
                }
                self.pos += 1;
                Ok(inner)
            }
            Tok::Op(c) => Err(DslErrorKind::Syntax(format!("unexpected `{c}` in `{}`", self.text))),
        }
    }
}
