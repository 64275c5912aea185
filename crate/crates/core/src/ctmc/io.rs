//! Plain-text generator interchange: a header `n=<N>` followed by one
//! `i j rate` triple per line. Lines starting with `#` are comments.

use super::{validate_generator, CtmcError, Generator, ProbDist};

fn parse_err(line: usize, msg: impl Into<String>) -> CtmcError {
    CtmcError::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn parse_generator(text: &str) -> Result<Generator, CtmcError> {
    let mut n: Option<usize> = None;
    let mut triples = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match n {
            None => {
                let value = line
                    .strip_prefix("n=")
                    .ok_or_else(|| parse_err(line_no, "expected header `n=<N>`"))?;
                let parsed: usize = value
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("invalid state count `{value}`")))?;
                if parsed == 0 {
                    return Err(parse_err(line_no, "state count must be positive"));
                }
                n = Some(parsed);
            }
            Some(_) => {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 3 {
                    return Err(parse_err(line_no, "expected `i j rate`"));
                }
                let i: usize = fields[0]
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("invalid source `{}`", fields[0])))?;
                let j: usize = fields[1]
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("invalid target `{}`", fields[1])))?;
                let rate: f64 = fields[2]
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("invalid rate `{}`", fields[2])))?;
                triples.push((i, j, rate));
            }
        }
    }
    let n = n.ok_or_else(|| parse_err(0, "missing header `n=<N>`"))?;
    validate_generator(triples, n)
}

pub fn write_generator(gen: &Generator) -> String {
    let mut out = format!("n={}\n", gen.n_states());
    for (i, j, rate) in gen.triples() {
        out.push_str(&format!("{i} {j} {rate:e}\n"));
    }
    out
}

/// Reads `state weight` lines into a distribution on `{1, …, n}`; unlisted
/// states get zero and the weights are normalized.
pub fn parse_distribution(text: &str, n: usize) -> Result<ProbDist, CtmcError> {
    let mut w = vec![0.0; n];
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(line_no, "expected `state weight`"));
        }
        let j: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid state `{}`", fields[0])))?;
        if j == 0 || j > n {
            return Err(parse_err(line_no, format!("state {j} outside 1..={n}")));
        }
        let v: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid weight `{}`", fields[1])))?;
        w[j - 1] += v;
    }
    ProbDist::from_weights(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_toy_with_comments() {
        let text = "# toy\nn=2\n1 0 1.0\n\n1 2 1\n# back\n2 1 2.0\n";
        let g = parse_generator(text).unwrap();
        assert_eq!(g.n_states(), 2);
        assert_eq!(g.exit_rate(1), 2.0);
        let again = parse_generator(&write_generator(&g)).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_generator("n=2\n1 0 1.0\n1 2 x\n").unwrap_err();
        assert_eq!(
            err,
            CtmcError::Parse {
                line: 3,
                msg: "invalid rate `x`".into()
            }
        );
        let err = parse_generator("1 0 1.0\n").unwrap_err();
        assert!(matches!(err, CtmcError::Parse { line: 1, .. }));
        assert!(matches!(
            parse_generator("n=2\n1 0\n"),
            Err(CtmcError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn validation_runs_after_parsing() {
        assert_eq!(
            parse_generator("n=2\n1 2 1\n2 1 1\n"),
            Err(CtmcError::NoAbsorption)
        );
    }

    #[test]
    fn distribution_files() {
        let p = parse_distribution("# mu\n1 2\n3 2\n", 3).unwrap();
        assert_eq!(p.prob(1), 0.5);
        assert_eq!(p.prob(2), 0.0);
        assert!(matches!(
            parse_distribution("4 1\n", 3),
            Err(CtmcError::Parse { line: 1, .. })
        ));
        assert!(parse_distribution("# empty\n", 3).is_err());
    }
}
