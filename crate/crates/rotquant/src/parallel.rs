//! Minimal deterministic row parallelism: output rows are disjoint chunks,
//! each row is a pure function of the input row, so the merged result is
//! identical for any thread count or schedule.

use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

/// Map every row of `input` to a row of width `cols_out`, using up to
/// `threads` worker threads.
pub fn map_rows<F, G>(
    input: &DenseMatrix<F>,
    cols_out: usize,
    threads: usize,
    f: G,
) -> DenseMatrix<F>
where
    F: Scalar,
    G: Fn(usize, &[F], &mut [F]) + Sync,
{
    let rows = input.rows();
    let threads = threads.clamp(1, rows.max(1));
    let mut out = vec![F::zero(); rows * cols_out];

    if threads <= 1 || rows <= 1 {
        for (r, chunk) in out.chunks_mut(cols_out).enumerate() {
            f(r, input.row(r), chunk);
        }
        return DenseMatrix::from_vec(rows, cols_out, out);
    }

    let chunk_rows = rows.div_ceil(threads);
    std::thread::scope(|scope| {
        for (idx, chunk) in out.chunks_mut(chunk_rows * cols_out).enumerate() {
            let f = &f;
            let first_row = idx * chunk_rows;
            scope.spawn(move || {
                for (offset, row_out) in chunk.chunks_mut(cols_out).enumerate() {
                    let r = first_row + offset;
                    f(r, input.row(r), row_out);
                }
            });
        }
    });
    DenseMatrix::from_vec(rows, cols_out, out)
}
