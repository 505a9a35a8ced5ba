//! Data-parallel helpers. With the `parallel` feature (default) work is
//! spread over the rayon pool; without it the same functions run
//! sequentially. Both variants stay callable so they can be compared.

/// Maps `f` over `items` keeping input order.
pub fn map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        par_map(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        seq_map(items, f)
    }
}

pub fn seq_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn par_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(mut self, other: CompensatedSum) -> CompensatedSum {
        self.add(other.sum);
        self.add(other.carry);
        self
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[cfg(feature = "parallel")]
const CHUNK: usize = 4096;

fn chunk_sum<F: Fn(usize) -> f64>(range: std::ops::Range<usize>, term: &F) -> CompensatedSum {
    let mut acc = CompensatedSum::default();
    for i in range {
        acc.add(term(i));
    }
    acc
}

/// Compensated sum of `term(i)` for `i in 0..n`, sequentially.
pub fn seq_sum_by<F: Fn(usize) -> f64>(n: usize, term: F) -> f64 {
    chunk_sum(0..n, &term).value()
}

/// Compensated sum of `term(i)` for `i in 0..n` over fixed-size chunks in
/// parallel. Chunk partials are merged in index order.
#[cfg(feature = "parallel")]
pub fn par_sum_by<F: Fn(usize) -> f64 + Sync + Send>(n: usize, term: F) -> f64 {
    use rayon::prelude::*;
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<CompensatedSum> = (0..chunks)
        .into_par_iter()
        .map(|c| chunk_sum(c * CHUNK..((c + 1) * CHUNK).min(n), &term))
        .collect();
    partials
        .into_iter()
        .fold(CompensatedSum::default(), CompensatedSum::merge)
        .value()
}

pub fn sum_by<F: Fn(usize) -> f64 + Sync + Send>(n: usize, term: F) -> f64 {
    #[cfg(feature = "parallel")]
    {
        if n > CHUNK {
            return par_sum_by(n, term);
        }
    }
    seq_sum_by(n, term)
}
