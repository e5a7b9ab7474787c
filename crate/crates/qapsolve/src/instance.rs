//! QAPLIB instance and solution file handling.
//!
//! A QAPLIB `.dat` file is whitespace-separated integers: the size `n`,
//! then `n*n` flow entries row-major, then `n*n` distance entries row-major.
//! A `.sln` file is `n`, the declared objective value, then a 1-based
//! permutation. Indices are 0-based everywhere inside the crate and 1-based
//! in files and reports.

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Errors raised while reading instance or solution streams.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed token {token:?} at byte {offset}")]
    MalformedToken { offset: usize, token: String },
    #[error("expected {expected} {what} entries, found {found}")]
    WrongCount {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("negative entry {value} at byte {offset}")]
    NegativeEntry { offset: usize, value: i64 },
    #[error("instance size must be at least 2, got {0}")]
    SizeTooSmall(i64),
    #[error("entry magnitude overflows the 64-bit cost bound (n^2 * max flow * max distance)")]
    CostOverflow,
    #[error("location index {index} out of range 1..={n}")]
    LocationOutOfRange { index: i64, n: usize },
    #[error("duplicate location {0}")]
    DuplicateLocation(usize),
    #[error("io error: {0}")]
    Io(String),
}

/// Square matrix of nonnegative integers, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SquareMat {
    n: usize,
    data: Vec<i64>,
}

impl SquareMat {
    pub fn new(n: usize, data: Vec<i64>) -> Self {
        assert_eq!(data.len(), n * n, "matrix data length mismatch");
        SquareMat { n, data }
    }

    pub fn zeros(n: usize) -> Self {
        SquareMat {
            n,
            data: vec![0; n * n],
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: i64) {
        self.data[i * self.n + j] = v;
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    pub fn max_entry(&self) -> i64 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Restriction to the rows and columns listed in `keep`, in order.
    pub fn restricted(&self, keep_rows: &[usize], keep_cols: &[usize]) -> SquareMat {
        assert_eq!(keep_rows.len(), keep_cols.len());
        let m = keep_rows.len();
        let mut data = Vec::with_capacity(m * m);
        for &r in keep_rows {
            for &c in keep_cols {
                data.push(self.get(r, c));
            }
        }
        SquareMat { n: m, data }
    }
}

/// A quadratic assignment instance: flows between facilities and distances
/// between locations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QapInstance {
    pub name: String,
    pub n: usize,
    pub flow: SquareMat,
    pub dist: SquareMat,
}

impl QapInstance {
    /// Validates sizes, nonnegativity and the 64-bit cost bound.
    pub fn new(name: &str, n: usize, flow: SquareMat, dist: SquareMat) -> Result<Self, ParseError> {
        if n < 2 {
            return Err(ParseError::SizeTooSmall(n as i64));
        }
        assert_eq!(flow.n(), n);
        assert_eq!(dist.n(), n);
        debug_assert!(flow.data().iter().all(|&v| v >= 0));
        debug_assert!(dist.data().iter().all(|&v| v >= 0));
        let bound =
            (n as i128) * (n as i128) * (flow.max_entry() as i128) * (dist.max_entry() as i128);
        if bound > i64::MAX as i128 {
            return Err(ParseError::CostOverflow);
        }
        Ok(QapInstance {
            name: name.to_string(),
            n,
            flow,
            dist,
        })
    }

    /// Swaps the roles of the two matrices (see [`Orientation`]).
    pub fn with_swapped_roles(&self) -> QapInstance {
        QapInstance {
            name: self.name.clone(),
            n: self.n,
            flow: self.dist.clone(),
            dist: self.flow.clone(),
        }
    }

    /// Canonical QAPLIB text form; parsing it back yields the same matrices.
    pub fn to_qaplib_string(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.n.to_string());
        s.push('\n');
        for mat in [&self.flow, &self.dist] {
            s.push('\n');
            for i in 0..self.n {
                let row: Vec<String> = (0..self.n).map(|j| mat.get(i, j).to_string()).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
        }
        s
    }

    /// Bytes hashed into checkpoint digests: size and both matrices, not the name.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 * self.n * self.n);
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        for mat in [&self.flow, &self.dist] {
            for &v in mat.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

/// Assignment of facilities to locations: `p[i]` is the location of facility `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    /// Validates that `p` is a bijection on `0..p.len()`.
    pub fn new(p: Vec<usize>) -> Result<Self, ParseError> {
        let n = p.len();
        let mut seen = vec![false; n];
        for &loc in &p {
            if loc >= n {
                return Err(ParseError::LocationOutOfRange {
                    index: loc as i64 + 1,
                    n,
                });
            }
            if seen[loc] {
                return Err(ParseError::DuplicateLocation(loc + 1));
            }
            seen[loc] = true;
        }
        Ok(Permutation(p))
    }

    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn loc(&self, facility: usize) -> usize {
        self.0[facility]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|&x| x + 1).collect()
    }

    /// The inverse mapping (location to facility).
    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (f, &l) in self.0.iter().enumerate() {
            inv[l] = f;
        }
        Permutation(inv)
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one: Vec<String> = self.0.iter().map(|&x| (x + 1).to_string()).collect();
        write!(f, "{}", one.join(" "))
    }
}

/// Whitespace-separated integer reader that remembers byte offsets.
struct TokenReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> TokenReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        TokenReader { bytes, pos: 0 }
    }

    /// Next integer token with its starting byte offset; `None` at end.
    fn next(&mut self) -> Option<Result<(i64, usize), ParseError>> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let raw = &self.bytes[start..self.pos];
        let text = String::from_utf8_lossy(raw);
        match text.parse::<i64>() {
            Ok(v) => Some(Ok((v, start))),
            Err(_) => Some(Err(ParseError::MalformedToken {
                offset: start,
                token: text.into_owned(),
            })),
        }
    }
}

fn read_matrix(
    reader: &mut TokenReader<'_>,
    n: usize,
    what: &'static str,
) -> Result<SquareMat, ParseError> {
    let mut data = Vec::with_capacity(n * n);
    for found in 0..n * n {
        match reader.next() {
            Some(Ok((v, offset))) => {
                if v < 0 {
                    return Err(ParseError::NegativeEntry { offset, value: v });
                }
                data.push(v);
            }
            Some(Err(e)) => return Err(e),
            None => {
                return Err(ParseError::WrongCount {
                    what,
                    expected: n * n,
                    found,
                })
            }
        }
    }
    Ok(SquareMat::new(n, data))
}

/// Parses a QAPLIB `.dat` stream. Trailing whitespace is tolerated.
pub fn parse_instance(source: &[u8]) -> Result<QapInstance, ParseError> {
    parse_instance_named(source, "unnamed")
}

/// As [`parse_instance`] with an instance name attached.
pub fn parse_instance_named(source: &[u8], name: &str) -> Result<QapInstance, ParseError> {
    let mut reader = TokenReader::new(source);
    let n = match reader.next() {
        Some(Ok((v, _))) if v >= 2 => v as usize,
        Some(Ok((v, _))) => return Err(ParseError::SizeTooSmall(v)),
        Some(Err(e)) => return Err(e),
        None => {
            return Err(ParseError::WrongCount {
                what: "size",
                expected: 1,
                found: 0,
            })
        }
    };
    let flow = read_matrix(&mut reader, n, "flow")?;
    let dist = read_matrix(&mut reader, n, "distance")?;
    QapInstance::new(name, n, flow, dist)
}

/// Reads an instance file, naming the instance after the file stem.
pub fn read_instance_file(path: &Path) -> Result<QapInstance, ParseError> {
    let bytes = std::fs::read(path).map_err(|e| ParseError::Io(e.to_string()))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unnamed".to_string());
    parse_instance_named(&bytes, &name)
}

/// Parses a QAPLIB `.sln` stream: `n`, declared value, 1-based permutation.
///
/// The declared value is returned as-is; use [`verify`] to check it.
pub fn parse_solution(source: &[u8]) -> Result<(i64, Permutation), ParseError> {
    let mut reader = TokenReader::new(source);
    let n = match reader.next() {
        Some(Ok((v, _))) if v >= 1 => v as usize,
        Some(Ok((v, _))) => return Err(ParseError::SizeTooSmall(v)),
        Some(Err(e)) => return Err(e),
        None => {
            return Err(ParseError::WrongCount {
                what: "size",
                expected: 1,
                found: 0,
            })
        }
    };
    let value = match reader.next() {
        Some(Ok((v, _))) => v,
        Some(Err(e)) => return Err(e),
        None => {
            return Err(ParseError::WrongCount {
                what: "objective value",
                expected: 1,
                found: 0,
            })
        }
    };
    let mut perm = Vec::with_capacity(n);
    for found in 0..n {
        match reader.next() {
            Some(Ok((v, _))) => {
                if v < 1 || v > n as i64 {
                    return Err(ParseError::LocationOutOfRange { index: v, n });
                }
                perm.push((v - 1) as usize);
            }
            Some(Err(e)) => return Err(e),
            None => {
                return Err(ParseError::WrongCount {
                    what: "permutation",
                    expected: n,
                    found,
                })
            }
        }
    }
    Ok((value, Permutation::new(perm)?))
}

/// Reads a solution file.
pub fn read_solution_file(path: &Path) -> Result<(i64, Permutation), ParseError> {
    let bytes = std::fs::read(path).map_err(|e| ParseError::Io(e.to_string()))?;
    parse_solution(&bytes)
}

/// Exact objective value of `perm` on `inst`: the full double sum of
/// flow times distance products, including the diagonal linear terms.
pub fn evaluate(inst: &QapInstance, perm: &Permutation) -> i64 {
    assert_eq!(
        perm.len(),
        inst.n,
        "permutation size {} does not match instance size {}",
        perm.len(),
        inst.n
    );
    let n = inst.n;
    let mut total = 0i64;
    for i in 0..n {
        let pi = perm.loc(i);
        for k in 0..n {
            total += inst.flow.get(i, k) * inst.dist.get(pi, perm.loc(k));
        }
    }
    total
}

/// Which matrix of the `.dat` file plays the flow role.
///
/// QAPLIB is not consistent across instance families; some files list the
/// distance matrix first. A solution file disambiguates: its declared value
/// matches exactly one role assignment (or both, for symmetric data).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    FlowFirst,
    DistFirst,
}

/// Verification outcome for an instance/solution pair.
#[derive(Debug, Clone)]
pub struct Verification {
    pub orientation: Orientation,
    pub declared: i64,
    pub evaluated: i64,
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(
        "declared value {declared} matches neither orientation \
         (flow-first evaluates to {flow_first}, swapped to {dist_first})"
    )]
    NoOrientationMatches {
        declared: i64,
        flow_first: i64,
        dist_first: i64,
    },
    #[error("solution has {perm} entries but instance has size {inst}")]
    SizeMismatch { inst: usize, perm: usize },
}

/// Checks a declared solution value under both role assignments and reports
/// which one matched. Both failing is a hard error.
pub fn verify(
    inst: &QapInstance,
    declared: i64,
    perm: &Permutation,
) -> Result<Verification, VerifyError> {
    if perm.len() != inst.n {
        return Err(VerifyError::SizeMismatch {
            inst: inst.n,
            perm: perm.len(),
        });
    }
    let flow_first = evaluate(inst, perm);
    if flow_first == declared {
        return Ok(Verification {
            orientation: Orientation::FlowFirst,
            declared,
            evaluated: flow_first,
        });
    }
    let swapped = inst.with_swapped_roles();
    let dist_first = evaluate(&swapped, perm);
    if dist_first == declared {
        return Ok(Verification {
            orientation: Orientation::DistFirst,
            declared,
            evaluated: dist_first,
        });
    }
    Err(VerifyError::NoOrientationMatches {
        declared,
        flow_first,
        dist_first,
    })
}

/// An instance plus its reference solution, role-normalized so that
/// `evaluate(&inst, &perm) == value`.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub inst: QapInstance,
    pub value: i64,
    pub perm: Permutation,
    pub orientation: Orientation,
}

/// Loads a `.dat`/`.sln` pair and resolves the role convention.
pub fn load_fixture(dat: &Path, sln: &Path) -> Result<Fixture, String> {
    let inst = read_instance_file(dat).map_err(|e| format!("{}: {e}", dat.display()))?;
    let (value, perm) = read_solution_file(sln).map_err(|e| format!("{}: {e}", sln.display()))?;
    let v = verify(&inst, value, &perm).map_err(|e| format!("{}: {e}", dat.display()))?;
    let inst = match v.orientation {
        Orientation::FlowFirst => inst,
        Orientation::DistFirst => inst.with_swapped_roles(),
    };
    Ok(Fixture {
        inst,
        value,
        perm,
        orientation: v.orientation,
    })
}

/// Tensor entry counts and a byte estimate for the RLT2 reduced-cost state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub n: usize,
    pub entries_b: u64,
    pub entries_c: u64,
    pub entries_d: u64,
    pub bytes_total: u64,
}

/// Fixed allocation overhead applied on top of 8 bytes per stored entry.
pub const MEMORY_OVERHEAD_FACTOR: f64 = 1.25;

/// Closed-form tensor sizes for an instance of size `n`.
///
/// B holds n^2 entries, C holds n^2 (n-1)^2, and D holds
/// n^2 (n-1)^2 (n-2)^2 / 2 because complementary submatrices share storage.
pub fn estimate_memory(n: usize) -> Result<MemoryEstimate, ParseError> {
    if n < 3 {
        return Err(ParseError::SizeTooSmall(n as i64));
    }
    let nn = n as u128;
    let b = nn * nn;
    let c = b * (nn - 1) * (nn - 1);
    let d = c * (nn - 2) * (nn - 2) / 2;
    let total = b + c + d;
    // 8 bytes per entry times 1.25 overhead = 10 bytes per entry, exactly.
    let bytes = total * 10;
    if bytes > u64::MAX as u128 {
        return Err(ParseError::CostOverflow);
    }
    Ok(MemoryEstimate {
        n,
        entries_b: b as u64,
        entries_c: c as u64,
        entries_d: d as u64,
        bytes_total: bytes as u64,
    })
}
