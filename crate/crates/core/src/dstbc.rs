//! Differential space-time block coding over distributed APs.
//!
//! Each stream is cut into segments of `n_s` PSK symbols, each segment is
//! mapped to a unitary orthogonal-design codeword `X`, and codewords are
//! chained as `C_t = C_{t-1} X_t` starting from `C_0 = I`. Row `m` of `C_t`
//! is sent by the `m`-th serving AP over the `L_k` symbol epochs of the
//! interval. With a static effective channel the received blocks satisfy
//! `Y_t = Y_{t-1} X_t`, which the detector exploits without any channel
//! knowledge.

use nalgebra::{DMatrix, RowDVector};

use crate::error::CodecError;
use crate::psk::Psk;
use crate::C64;

/// Encodings between polar re-orthonormalizations of the encoder state.
pub const REORTHONORMALIZE_EVERY: usize = 32;

/// Orthogonal design used for a given codeword span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    /// 2x2 Alamouti code, two symbols per codeword.
    Alamouti2,
    /// 4x4 rate-3/4 complex orthogonal design, three symbols per codeword.
    Ostbc4Rate34,
}

impl Design {
    pub fn for_span(span: usize) -> Result<Self, CodecError> {
        match span {
            2 => Ok(Design::Alamouti2),
            4 => Ok(Design::Ostbc4Rate34),
            other => Err(CodecError::UnsupportedDesign(other)),
        }
    }

    pub fn span(self) -> usize {
        match self {
            Design::Alamouti2 => 2,
            Design::Ostbc4Rate34 => 4,
        }
    }

    pub fn symbols(self) -> usize {
        match self {
            Design::Alamouti2 => 2,
            Design::Ostbc4Rate34 => 3,
        }
    }

    /// Unitary codeword for the given symbols (which must be unit modulus).
    pub fn codeword(self, s: &[C64]) -> DMatrix<C64> {
        let z = C64::new(0.0, 0.0);
        match self {
            Design::Alamouti2 => {
                let (s1, s2) = (s[0], s[1]);
                DMatrix::from_row_slice(2, 2, &[s1, s2, -s2.conj(), s1.conj()]) * C64::new(0.5f64.sqrt(), 0.0)
            }
            Design::Ostbc4Rate34 => {
                let (s1, s2, s3) = (s[0], s[1], s[2]);
                #[rustfmt::skip]
                let entries = [
                    s1,          s2,          s3,         z,
                    -s2.conj(),  s1.conj(),   z,          s3,
                    -s3.conj(),  z,           s1.conj(),  -s2,
                    z,           -s3.conj(),  s2.conj(),  s1,
                ];
                DMatrix::from_row_slice(4, 4, &entries) * C64::new((1.0f64 / 3.0).sqrt(), 0.0)
            }
        }
    }

    /// Per-symbol coefficients `a_i` such that
    /// `Re tr{X D} = scale * sum_i Re{s_i a_i}`.
    fn decoupled_coefficients(self, d: &DMatrix<C64>) -> (f64, Vec<C64>) {
        match self {
            Design::Alamouti2 => (
                0.5f64.sqrt(),
                vec![d[(0, 0)] + d[(1, 1)].conj(), d[(1, 0)] - d[(0, 1)].conj()],
            ),
            Design::Ostbc4Rate34 => (
                (1.0f64 / 3.0).sqrt(),
                vec![
                    d[(0, 0)] + d[(3, 3)] + d[(1, 1)].conj() + d[(2, 2)].conj(),
                    d[(1, 0)] - d[(3, 2)] - d[(0, 1)].conj() + d[(2, 3)].conj(),
                    d[(2, 0)] + d[(3, 1)] - d[(0, 2)].conj() - d[(1, 3)].conj(),
                ],
            ),
        }
    }
}

/// All codewords of a design over a PSK constellation.
///
/// Entry `i` encodes the symbol tuple whose base-`M` digits (first symbol
/// most significant) spell `i`.
#[derive(Debug, Clone)]
pub struct SpaceTimeCodebook {
    pub design: Design,
    pub constellation: Psk,
    pub entries: Vec<DMatrix<C64>>,
}

impl SpaceTimeCodebook {
    pub fn build(psk_order: usize, design: Design) -> Result<Self, CodecError> {
        let constellation = Psk::new(psk_order)?;
        let n = design.symbols();
        let size = psk_order.pow(n as u32);
        let entries = (0..size)
            .map(|i| {
                let symbols: Vec<C64> = tuple_of(i, n, psk_order)
                    .into_iter()
                    .map(|m| constellation.point(m))
                    .collect();
                design.codeword(&symbols)
            })
            .collect();
        Ok(SpaceTimeCodebook {
            design,
            constellation,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, tuple: &[usize]) -> usize {
        tuple
            .iter()
            .fold(0, |acc, &m| acc * self.constellation.order() + m)
    }

    pub fn tuple(&self, index: usize) -> Vec<usize> {
        tuple_of(index, self.design.symbols(), self.constellation.order())
    }

    /// Codeword for a tuple of constellation indices.
    pub fn codeword(&self, tuple: &[usize]) -> &DMatrix<C64> {
        &self.entries[self.index_of(tuple)]
    }
}

fn tuple_of(mut index: usize, n: usize, order: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    for slot in out.iter_mut().rev() {
        *slot = index % order;
        index /= order;
    }
    out
}

/// Splits a stream of `(G - 1) n_s` symbols into `G - 1` segments.
pub fn segment_stream<T>(symbols: &[T], symbols_per_codeword: usize, intervals: usize) -> Result<Vec<&[T]>, CodecError> {
    let expected = intervals.saturating_sub(1) * symbols_per_codeword;
    if symbols.len() != expected || symbols_per_codeword == 0 {
        return Err(CodecError::LengthMismatch {
            expected,
            got: symbols.len(),
        });
    }
    Ok(symbols.chunks(symbols_per_codeword).collect())
}

/// Cumulative codeword of one (UE, stream) pair.
#[derive(Debug, Clone)]
pub struct EncoderState {
    c_prev: DMatrix<C64>,
    encoded: usize,
}

impl EncoderState {
    pub fn new(span: usize) -> Self {
        EncoderState {
            c_prev: DMatrix::identity(span, span),
            encoded: 0,
        }
    }

    pub fn current(&self) -> &DMatrix<C64> {
        &self.c_prev
    }

    /// `C_t = C_{t-1} X_t`; the new matrix becomes the state.
    pub fn encode(&mut self, x: &DMatrix<C64>) -> &DMatrix<C64> {
        self.c_prev = &self.c_prev * x;
        self.encoded += 1;
        if self.encoded.is_multiple_of(REORTHONORMALIZE_EVERY) {
            self.c_prev = nearest_unitary(&self.c_prev);
        }
        &self.c_prev
    }

    pub fn unitarity_error(&self) -> f64 {
        unitarity_error(&self.c_prev)
    }
}

/// `||A A^H - I||_F`.
pub fn unitarity_error(a: &DMatrix<C64>) -> f64 {
    let n = a.nrows();
    (a * a.adjoint() - DMatrix::<C64>::identity(n, n)).norm()
}

/// Polar factor `U V^H` of the SVD `A = U S V^H`.
pub fn nearest_unitary(a: &DMatrix<C64>) -> DMatrix<C64> {
    let svd = a.clone().svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => u * v_t,
        _ => a.clone(),
    }
}

/// Row `m` (1-based) of `C_prev X`: what the `m`-th serving AP transmits.
pub fn rows_for_ap(c_prev: &DMatrix<C64>, x: &DMatrix<C64>, m: usize) -> Result<RowDVector<C64>, CodecError> {
    let span = c_prev.nrows();
    if m == 0 || m > span {
        return Err(CodecError::RowOutOfRange { index: m, span });
    }
    Ok(c_prev.row(m - 1) * x)
}

/// Stacks one row per stream into the `N_s x L_k` block an AP sends to a UE.
pub fn build_block(rows: &[RowDVector<C64>], streams: usize) -> Result<DMatrix<C64>, CodecError> {
    if rows.len() != streams || streams == 0 {
        return Err(CodecError::MissingStream {
            expected: streams,
            got: rows.len(),
        });
    }
    let span = rows[0].len();
    let mut block = DMatrix::zeros(streams, span);
    for (j, row) in rows.iter().enumerate() {
        if row.len() != span {
            return Err(CodecError::Shape {
                expected_rows: 1,
                expected_cols: span,
                rows: 1,
                cols: row.len(),
            });
        }
        block.set_row(j, row);
    }
    Ok(block)
}

/// Rows `(j-1) N_b .. j N_b` of a received block (`j` is 1-based).
pub fn extract_stream(y: &DMatrix<C64>, j: usize, group_size: usize) -> Result<DMatrix<C64>, CodecError> {
    let streams = y.nrows().checked_div(group_size).unwrap_or(0);
    if j == 0 || j > streams {
        return Err(CodecError::StreamOutOfRange { index: j, streams });
    }
    Ok(y.rows((j - 1) * group_size, group_size).into_owned())
}

/// Outcome of one differential detection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Detection {
    /// Constellation index of each symbol in the codeword.
    pub symbols: Vec<usize>,
    /// Number of candidate metrics evaluated.
    pub evaluations: usize,
}

fn correlation(y_t: &DMatrix<C64>, y_prev: &DMatrix<C64>) -> Result<DMatrix<C64>, CodecError> {
    if y_t.shape() != y_prev.shape() {
        return Err(CodecError::Shape {
            expected_rows: y_prev.nrows(),
            expected_cols: y_prev.ncols(),
            rows: y_t.nrows(),
            cols: y_t.ncols(),
        });
    }
    Ok(y_t.adjoint() * y_prev)
}

/// Exhaustive search of `argmax_X Re tr{X Y_t^H Y_{t-1}}` over the codebook,
/// lowest codebook index on ties.
pub fn detect_ml_full(
    y_t: &DMatrix<C64>,
    y_prev: &DMatrix<C64>,
    codebook: &SpaceTimeCodebook,
) -> Result<Detection, CodecError> {
    let d = correlation(y_t, y_prev)?;
    let span = codebook.design.span();
    if d.nrows() != span {
        return Err(CodecError::Shape {
            expected_rows: span,
            expected_cols: span,
            rows: d.nrows(),
            cols: d.ncols(),
        });
    }
    let mut best = 0;
    let mut best_metric = f64::NEG_INFINITY;
    for (idx, x) in codebook.entries.iter().enumerate() {
        let mut trace = 0.0;
        for i in 0..span {
            for j in 0..span {
                trace += (x[(i, j)] * d[(j, i)]).re;
            }
        }
        if trace > best_metric {
            best = idx;
            best_metric = trace;
        }
    }
    Ok(Detection {
        symbols: codebook.tuple(best),
        evaluations: codebook.len(),
    })
}

/// Symbol-wise detection: the orthogonal design makes the trace metric a
/// sum of independent terms `Re{s_i a_i}`, each maximized separately.
pub fn detect_ml_decoupled(
    y_t: &DMatrix<C64>,
    y_prev: &DMatrix<C64>,
    design: Design,
    constellation: &Psk,
) -> Result<Detection, CodecError> {
    let d = correlation(y_t, y_prev)?;
    let span = design.span();
    if d.nrows() != span {
        return Err(CodecError::Shape {
            expected_rows: span,
            expected_cols: span,
            rows: d.nrows(),
            cols: d.ncols(),
        });
    }
    let (scale, coefficients) = design.decoupled_coefficients(&d);
    let symbols: Vec<usize> = coefficients
        .iter()
        .map(|a| constellation.best_rotation(a * scale))
        .collect();
    Ok(Detection {
        evaluations: symbols.len() * constellation.order(),
        symbols,
    })
}
