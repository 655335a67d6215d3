//! Deliberately naive metric implementations: linear scans instead of maps, and
//! exhaustive subsequence enumeration instead of dynamic programming.

fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

fn grams(t: &[String], n: usize) -> Vec<Vec<String>> {
    if t.len() < n {
        return Vec::new();
    }
    (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
}

fn count(haystack: &[Vec<String>], needle: &[String]) -> usize {
    haystack.iter().filter(|g| g.as_slice() == needle).count()
}

fn unique(gs: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in gs {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

pub fn bleu(cands: &[&str], refs: &[Vec<&str>]) -> f64 {
    let mut matched = [0.0f64; 4];
    let mut total = [0.0f64; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, rs) in cands.iter().zip(refs) {
        let c = tokens(cand);
        let rt: Vec<Vec<String>> = rs.iter().map(|r| tokens(r)).collect();
        c_len += c.len();
        let mut best = usize::MAX;
        let mut best_diff = usize::MAX;
        for r in &rt {
            let d = r.len().abs_diff(c.len());
            if d < best_diff || (d == best_diff && r.len() < best) {
                best = r.len();
                best_diff = d;
            }
        }
        r_len += best;
        for n in 1..=4 {
            let cg = grams(&c, n);
            for g in unique(&cg) {
                let max_ref = rt
                    .iter()
                    .map(|r| count(&grams(r, n), &g))
                    .max()
                    .unwrap_or(0);
                matched[n - 1] += count(&cg, &g).min(max_ref) as f64;
            }
            total[n - 1] += cg.len() as f64;
        }
    }
    if c_len == 0 {
        return 0.0;
    }
    let mut product = 1.0f64;
    for n in 0..4 {
        let m = if matched[n] == 0.0 { 1e-9 } else { matched[n] };
        product *= m / total[n].max(1.0);
    }
    let bp = if c_len < r_len {
        (1.0 - r_len as f64 / c_len as f64).exp()
    } else {
        1.0
    };
    bp * product.powf(0.25)
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == *n))
}

/// Longest common subsequence by trying every subset of the candidate.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 20, "exhaustive LCS is exponential");
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let pick: Vec<&String> = (0..a.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &a[i])
            .collect();
        if is_subsequence(&pick, b) {
            best = k;
        }
    }
    best
}

pub fn rouge_l(cand: &str, refs: &[&str]) -> f64 {
    let c = tokens(cand);
    let beta = 1.2f64;
    refs.iter()
        .map(|r| {
            let r = tokens(r);
            let l = lcs(&c, &r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / c.len() as f64;
            let rec = l / r.len() as f64;
            (1.0 + beta * beta) * p * rec / (rec + beta * beta * p)
        })
        .fold(0.0, f64::max)
}

fn tfidf(t: &[String], n: usize, docs: &[Vec<Vec<String>>]) -> Vec<(Vec<String>, f64)> {
    let gs = grams(t, n);
    let n_docs = docs.len() as f64;
    unique(&gs)
        .into_iter()
        .map(|g| {
            let df = docs
                .iter()
                .filter(|refs| refs.iter().any(|r| count(&grams(r, n), &g) > 0))
                .count() as f64;
            let idf = (n_docs / (1.0 + df).min(n_docs)).ln();
            let tf = count(&gs, &g) as f64;
            (g, tf * idf)
        })
        .collect()
}

fn cosine(a: &[(Vec<String>, f64)], b: &[(Vec<String>, f64)]) -> f64 {
    let na: f64 = a.iter().map(|x| x.1 * x.1).sum();
    let nb: f64 = b.iter().map(|x| x.1 * x.1).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let mut dot = 0.0;
    for (g, v) in a {
        for (h, w) in b {
            if g == h {
                dot += v * w;
            }
        }
    }
    dot / (na.sqrt() * nb.sqrt())
}

pub fn cider(cands: &[&str], refs: &[Vec<&str>], corpus: &[Vec<&str>]) -> f64 {
    let docs: Vec<Vec<Vec<String>>> = corpus
        .iter()
        .map(|rs| rs.iter().map(|r| tokens(r)).collect())
        .collect();
    let mut total = 0.0;
    for (cand, rs) in cands.iter().zip(refs) {
        let c = tokens(cand);
        let mut score = 0.0;
        for n in 1..=4 {
            let vc = tfidf(&c, n, &docs);
            let mut s = 0.0;
            for r in rs {
                s += cosine(&vc, &tfidf(&tokens(r), n, &docs));
            }
            score += s / rs.len() as f64;
        }
        total += 10.0 * score / 4.0;
    }
    total / cands.len() as f64
}
