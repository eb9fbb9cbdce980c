//! Text form of contracts used by `--contract` and `run.contract`:
//! `zero`, `full`, `deductible:A`, `proportional:K`, `three-piece:A,B`,
//! `tabulated:Z1=V1,Z2=V2,...`.

use clusterre::Contract;

pub fn parse(spec: &str) -> Result<Contract, String> {
    let spec = spec.trim();
    let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
    let numbers = |expected: usize| -> Result<Vec<f64>, String> {
        let values: Vec<f64> = args
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<f64>().map_err(|e| format!("`{}` in `{spec}`: {e}", s.trim())))
            .collect::<Result<_, _>>()?;
        if values.len() != expected {
            return Err(format!("`{kind}` takes {expected} number(s), got {} in `{spec}`", values.len()));
        }
        Ok(values)
    };
    let contract = match kind {
        "zero" => {
            numbers(0)?;
            Ok(Contract::Zero)
        }
        "full" => {
            numbers(0)?;
            Ok(Contract::Full)
        }
        "deductible" => Contract::deductible(numbers(1)?[0]),
        "proportional" => Contract::proportional(numbers(1)?[0]),
        "three-piece" => {
            let v = numbers(2)?;
            Contract::three_piece(v[0], v[1])
        }
        "tabulated" => {
            let knots = args
                .split(',')
                .map(|pair| {
                    let (z, v) = pair
                        .split_once('=')
                        .ok_or_else(|| format!("tabulated knots are written z=phi, got `{pair}`"))?;
                    let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", s.trim()));
                    Ok((parse(z)?, parse(v)?))
                })
                .collect::<Result<Vec<_>, String>>()?;
            Contract::tabulated(knots)
        }
        other => {
            return Err(format!(
                "unknown contract `{other}` (expected zero, full, deductible:A, proportional:K, three-piece:A,B or tabulated:Z=V,...)"
            ))
        }
    };
    contract.map_err(|e| e.to_string())
}

pub fn describe(contract: &Contract) -> String {
    match contract {
        Contract::Zero => "zero".into(),
        Contract::Full => "full".into(),
        Contract::Deductible { a } => format!("deductible:{a}"),
        Contract::Proportional { k } => format!("proportional:{k}"),
        Contract::ThreePiece { a, b } => format!("three-piece:{a},{b}"),
        Contract::Tabulated { knots } => {
            let body: Vec<String> = knots.iter().map(|(z, v)| format!("{z}={v}")).collect();
            format!("tabulated:{}", body.join(","))
        }
    }
}
