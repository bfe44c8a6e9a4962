//! Time-indexed record of a simulation run.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::hierarchy::ConceptId;
use crate::network::{NeuronId, WeightSnapshot};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Engagement {
    pub neuron: NeuronId,
    pub concept: ConceptId,
    pub potential: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub time: u64,
    pub shown: Option<ConceptId>,
    /// Number of input neurons firing.
    pub input_count: u32,
    /// `fired[l - 1]`: indices of layer-`l` neurons firing at `time`.
    pub fired: Vec<Vec<u32>>,
    pub engaged: Vec<Engagement>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimulationTrace {
    pub steps: Vec<TraceStep>,
    pub snapshots: Vec<WeightSnapshot>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `time,shown,input_count,fired,engaged,engaged_potential`.
    ///
    /// `fired` lists `layer:i i ..` groups separated by `;`; engagement
    /// columns are `;`-separated when several layers learn in one step.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "time,shown,input_count,fired,engaged,engaged_potential")?;
        let mut line = String::new();
        for s in &self.steps {
            line.clear();
            let shown = s.shown.map(|c| format!("{}:{}", c.level, c.index)).unwrap_or_default();
            let mut fired = Vec::new();
            for (l, idx) in s.fired.iter().enumerate() {
                if !idx.is_empty() {
                    let list: Vec<String> = idx.iter().map(u32::to_string).collect();
                    fired.push(format!("{}:{}", l + 1, list.join(" ")));
                }
            }
            let engaged: Vec<String> = s.engaged.iter().map(|e| format!("{}:{}", e.neuron.layer, e.neuron.index)).collect();
            let pots: Vec<String> = s.engaged.iter().map(|e| format!("{:?}", e.potential)).collect();
            let _ = write!(
                line,
                "{},{},{},{},{},{}",
                s.time,
                shown,
                s.input_count,
                fired.join(";"),
                engaged.join(";"),
                pots.join(";")
            );
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Long-format weight history: `time,layer,target,source,weight`,
    /// restricted to the given tracked neurons.
    pub fn write_snapshot_csv<W: Write>(&self, tracked: &[NeuronId], out: &mut W) -> io::Result<()> {
        writeln!(out, "time,layer,target,source,weight")?;
        for snap in &self.snapshots {
            let n = snap.width as usize;
            for t in tracked.iter().filter(|t| t.layer == snap.layer) {
                let row = &snap.weights[t.index as usize * n..(t.index as usize + 1) * n];
                for (src, w) in row.iter().enumerate() {
                    writeln!(out, "{},{},{},{},{:?}", snap.time, snap.layer, t.index, src, w)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let trace = SimulationTrace {
            steps: vec![
                TraceStep { time: 1, shown: Some(ConceptId::new(1, 2)), input_count: 4, fired: vec![vec![], vec![]], engaged: vec![] },
                TraceStep {
                    time: 2,
                    shown: None,
                    input_count: 0,
                    fired: vec![vec![3, 5], vec![]],
                    engaged: vec![Engagement { neuron: NeuronId::new(1, 3), concept: ConceptId::new(1, 2), potential: 0.25 }],
                },
            ],
            snapshots: vec![],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "1,1:2,4,,,");
        assert_eq!(lines[2], "2,,0,1:3 5,1:3,0.25");
    }
}
