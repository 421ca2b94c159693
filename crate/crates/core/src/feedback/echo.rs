use super::{GenerateError, Generator, SamplingConfig};
use crate::transforms::{parse_table_lines, strip_stars};

/// Deterministic offline feedbacker.
///
/// Answers with the cell texts of the starred rows in the prompt's table, or
/// of every row when nothing is starred, space-joined in row order.
#[derive(Debug, Clone)]
pub struct EchoOracle {
    model_id: String,
}

impl EchoOracle {
    pub fn new() -> Self {
        EchoOracle {
            model_id: "echo-oracle".into(),
        }
    }
}

impl Default for EchoOracle {
    fn default() -> Self {
        Self::new()
    }
}

fn is_starred(cells: &[String]) -> bool {
    !cells.is_empty() && cells.iter().all(|c| strip_stars(c).is_some())
}

impl Generator for EchoOracle {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, prompt: &str, _cfg: &SamplingConfig) -> Result<String, GenerateError> {
        let parsed = parse_table_lines(prompt);
        if parsed.rows.is_empty() {
            return Err(GenerateError::NoTableFound);
        }
        let any_starred = parsed.rows.iter().any(|(_, cells)| is_starred(cells));
        let words: Vec<&str> = parsed
            .rows
            .iter()
            .filter(|(_, cells)| !any_starred || is_starred(cells))
            .flat_map(|(_, cells)| {
                cells.iter().map(|c| {
                    if any_starred {
                        strip_stars(c).unwrap_or(c)
                    } else {
                        c.as_str()
                    }
                })
            })
            .filter(|c| !c.is_empty())
            .collect();
        Ok(words.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{Evidence, Table};
    use crate::transforms::{highlight, linearize, subtable};

    fn table() -> Table {
        Table::new(
            "Clubs",
            vec!["Year".into(), "Team".into()],
            vec![
                vec!["1999".into(), "Ajax".into()],
                vec!["2000".into(), "PSV".into()],
                vec!["2001".into(), "Feyenoord".into()],
            ],
        )
        .unwrap()
    }

    #[test]
    fn echoes_all_rows_of_a_subtable() {
        let sub = subtable(&table(), &Evidence::new(vec![1, 2]).unwrap()).unwrap();
        let prompt = format!("Answer.\n{}\n###Output\n", linearize(&sub).text);
        let out = EchoOracle::new().generate(&prompt, &SamplingConfig::default()).unwrap();
        assert_eq!(out, "1999 Ajax 2000 PSV");
    }

    #[test]
    fn echoes_only_starred_rows() {
        let hl = highlight(&table(), &Evidence::singleton(2)).unwrap();
        let prompt = linearize(&hl).text;
        let out = EchoOracle::new().generate(&prompt, &SamplingConfig::default()).unwrap();
        assert_eq!(out, "2000 PSV");
    }

    #[test]
    fn no_table_is_an_error() {
        let err = EchoOracle::new()
            .generate("just words", &SamplingConfig::default())
            .unwrap_err();
        assert_eq!(err, GenerateError::NoTableFound);
    }

    #[test]
    fn escaped_cells_are_unescaped() {
        let t = Table::new("", vec!["a".into()], vec![vec!["x | y".into()]]).unwrap();
        let out = EchoOracle::new()
            .generate(&linearize(&t).text, &SamplingConfig::default())
            .unwrap();
        assert_eq!(out, "x | y");
    }
}
