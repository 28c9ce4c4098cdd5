use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A permuted binary vector, given by whichever of its two index sets is
/// smaller.
#[derive(Debug, Clone, Copy)]
pub enum Draw<'a> {
    Ones(&'a [usize]),
    Zeros(&'a [usize]),
}

/// Uniform random relabelings of a binary vector with `s` ones out of `n`.
///
/// A uniform permutation of x is a uniform s-subset of positions, so only
/// min(s, n − s) swaps of a partial Fisher–Yates shuffle are needed.
#[derive(Debug, Clone)]
pub struct PermSampler {
    pool: Vec<usize>,
    k: usize,
    complement: bool,
    rng: ChaCha8Rng,
}

impl PermSampler {
    pub fn new(n: usize, s: usize, rng: ChaCha8Rng) -> Self {
        assert!(s <= n);
        let complement = s > n - s;
        Self {
            pool: (0..n).collect(),
            k: if complement { n - s } else { s },
            complement,
            rng,
        }
    }

    pub fn draw(&mut self) -> Draw<'_> {
        let n = self.pool.len();
        for i in 0..self.k {
            let j = self.rng.random_range(i..n);
            self.pool.swap(i, j);
        }
        let picked = &self.pool[..self.k];
        if self.complement {
            Draw::Zeros(picked)
        } else {
            Draw::Ones(picked)
        }
    }
}

/// Visit every permutation of `0..n` (Heap's algorithm), identity first.
pub fn for_each_permutation<F: FnMut(&[usize])>(n: usize, mut f: F) {
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&a);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}
