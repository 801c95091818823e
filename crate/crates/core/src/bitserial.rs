//! Behavioral model of the transposed timestamp/s-bit SRAM array.
//!
//! Every cache line owns one column. A column holds the line's load-time
//! timestamp (`tc`) followed by one s-bit per hardware context. The array can
//! be accessed column-wise (the "transpose" interface the cache uses on every
//! access) or row-wise (the bit-line interface used for s-bit save/restore and
//! for the bit-serial timestamp comparison at context-switch time).
//!
//! Rows are stored as packed `u64` words, so one word operation models 64
//! bit-line peripherals working in parallel.

use std::fmt::{self, Write as _};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArrayError {
    #[error("column {column} out of range (array has {columns} columns)")]
    ColumnOutOfRange { column: usize, columns: usize },
    #[error("context {ctx} out of range (array has {contexts} s-bit rows)")]
    ContextOutOfRange { ctx: usize, contexts: usize },
    #[error("row length {got} does not match array width {expected}")]
    RowLength { got: usize, expected: usize },
}

/// A packed row of bits, one per column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitRow {
    len: usize,
    words: Vec<u64>,
}

impl BitRow {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut row = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            row.set(i, b);
        }
        row
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn clear_all(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Mask of valid bits in the last word.
    fn tail_mask(&self) -> u64 {
        match self.len % 64 {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        }
    }
}

impl fmt::Display for BitRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_char(if self.get(i) { '1' } else { '0' })?;
        }
        Ok(())
    }
}

/// The two SR latches attached to every bit-line.
#[derive(Clone, Debug)]
pub struct PeripheralLatches {
    /// Set once `tc > ts` has been decided for the column.
    pub gt: BitRow,
    /// Set once `tc < ts` has been decided; the column ignores further bits.
    pub lt: BitRow,
}

impl PeripheralLatches {
    pub fn reset(columns: usize) -> Self {
        Self {
            gt: BitRow::zeros(columns),
            lt: BitRow::zeros(columns),
        }
    }
}

/// `Ts` loaded into a shift register and consumed MSB first.
#[derive(Clone, Debug)]
pub struct TsShiftRegister {
    value: u32,
    remaining: u32,
}

impl TsShiftRegister {
    pub fn load(value: u32, width: u32) -> Self {
        Self {
            value,
            remaining: width,
        }
    }

    pub fn remaining(&self) -> u32 {
        self.remaining
    }

    /// Shifts out the next bit, or `None` once fully consumed.
    pub fn shift(&mut self) -> Option<bool> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some((self.value >> self.remaining) & 1 == 1)
    }
}

/// Result of one bit-serial comparison pass.
#[derive(Clone, Debug)]
pub struct CompareOutcome {
    /// Columns whose `tc > ts`; their s-bit for the context was cleared.
    pub reset_mask: BitRow,
    /// Number of bit-serial steps executed. Always equals the timestamp width.
    pub iterations: u32,
}

#[derive(Clone, Debug)]
pub struct TransposeArray {
    columns: usize,
    timestamp_bits: u32,
    /// `tc_rows[b]` holds bit `b` (LSB = 0) of every column's timestamp.
    tc_rows: Vec<BitRow>,
    /// One s-bit row per hardware context.
    sbit_rows: Vec<BitRow>,
}

impl TransposeArray {
    pub fn new(columns: usize, timestamp_bits: u32, contexts: usize) -> Self {
        assert!((1..=32).contains(&timestamp_bits), "timestamp width must be 1..=32");
        Self {
            columns,
            timestamp_bits,
            tc_rows: (0..timestamp_bits).map(|_| BitRow::zeros(columns)).collect(),
            sbit_rows: (0..contexts).map(|_| BitRow::zeros(columns)).collect(),
        }
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn timestamp_bits(&self) -> u32 {
        self.timestamp_bits
    }

    pub fn contexts(&self) -> usize {
        self.sbit_rows.len()
    }

    /// Total bit rows: timestamp bits plus one s-bit row per context.
    pub fn bit_rows(&self) -> usize {
        self.timestamp_bits as usize + self.sbit_rows.len()
    }

    fn check_column(&self, column: usize) -> Result<(), ArrayError> {
        if column >= self.columns {
            return Err(ArrayError::ColumnOutOfRange {
                column,
                columns: self.columns,
            });
        }
        Ok(())
    }

    fn check_ctx(&self, ctx: usize) -> Result<(), ArrayError> {
        if ctx >= self.sbit_rows.len() {
            return Err(ArrayError::ContextOutOfRange {
                ctx,
                contexts: self.sbit_rows.len(),
            });
        }
        Ok(())
    }

    // Transpose (column) interface.

    pub fn write_tc(&mut self, column: usize, tc: u32) -> Result<(), ArrayError> {
        self.check_column(column)?;
        for (b, row) in self.tc_rows.iter_mut().enumerate() {
            row.set(column, (tc >> b) & 1 == 1);
        }
        Ok(())
    }

    pub fn read_tc(&self, column: usize) -> Result<u32, ArrayError> {
        self.check_column(column)?;
        Ok(self
            .tc_rows
            .iter()
            .enumerate()
            .fold(0u32, |acc, (b, row)| acc | (u32::from(row.get(column)) << b)))
    }

    pub fn write_sbit(&mut self, column: usize, ctx: usize, value: bool) -> Result<(), ArrayError> {
        self.check_column(column)?;
        self.check_ctx(ctx)?;
        self.sbit_rows[ctx].set(column, value);
        Ok(())
    }

    pub fn read_sbit(&self, column: usize, ctx: usize) -> Result<bool, ArrayError> {
        self.check_column(column)?;
        self.check_ctx(ctx)?;
        Ok(self.sbit_rows[ctx].get(column))
    }

    /// Clears every context's s-bit for the column (eviction / invalidation).
    pub fn clear_sbits(&mut self, column: usize) -> Result<(), ArrayError> {
        self.check_column(column)?;
        for row in &mut self.sbit_rows {
            row.set(column, false);
        }
        Ok(())
    }

    /// Line fill: stores `tc` and leaves only `ctx`'s s-bit set.
    pub fn fill_column(&mut self, column: usize, tc: u32, ctx: usize) -> Result<(), ArrayError> {
        self.check_ctx(ctx)?;
        self.write_tc(column, tc)?;
        for (c, row) in self.sbit_rows.iter_mut().enumerate() {
            row.set(column, c == ctx);
        }
        Ok(())
    }

    // Regular (row) interface.

    /// Reads timestamp bit `bit` (LSB = 0) of every column at once.
    pub fn tc_row(&self, bit: u32) -> &BitRow {
        &self.tc_rows[bit as usize]
    }

    pub fn sbit_row(&self, ctx: usize) -> Result<&BitRow, ArrayError> {
        self.check_ctx(ctx)?;
        Ok(&self.sbit_rows[ctx])
    }

    pub fn save_sbits(&self, ctx: usize) -> Result<BitRow, ArrayError> {
        self.sbit_row(ctx).cloned()
    }

    pub fn restore_sbits(&mut self, ctx: usize, row: &BitRow) -> Result<(), ArrayError> {
        self.check_ctx(ctx)?;
        if row.len() != self.columns {
            return Err(ArrayError::RowLength {
                got: row.len(),
                expected: self.columns,
            });
        }
        self.sbit_rows[ctx] = row.clone();
        Ok(())
    }

    pub fn clear_sbit_row(&mut self, ctx: usize) -> Result<(), ArrayError> {
        self.check_ctx(ctx)?;
        self.sbit_rows[ctx].clear_all();
        Ok(())
    }

    /// Bit-serial, timestamp-parallel `tc > ts` comparison.
    ///
    /// Walks the timestamp rows MSB first while shifting `ts` out of a shift
    /// register. A column whose `tc` bit is 1 where `ts` has 0 latches
    /// "greater"; a column with 0 where `ts` has 1 latches "less" and ignores
    /// the remaining bits. After the last step, the "greater" latches drive
    /// the reset of `ctx`'s s-bit row. The step count depends only on the
    /// timestamp width.
    pub fn compare_and_reset(&mut self, ts: u32, ctx: usize) -> Result<CompareOutcome, ArrayError> {
        self.check_ctx(ctx)?;
        let mut latches = PeripheralLatches::reset(self.columns);
        let mut shift = TsShiftRegister::load(ts, self.timestamp_bits);
        let mut iterations = 0u32;
        let mut bit = self.timestamp_bits;
        while let Some(ts_bit) = shift.shift() {
            bit -= 1;
            let tc_row = &self.tc_rows[bit as usize];
            let tail = tc_row.tail_mask();
            let last = tc_row.words.len().saturating_sub(1);
            for (w, &tc_word) in tc_row.words.iter().enumerate() {
                let valid = if w == last { tail } else { u64::MAX };
                let undecided = !(latches.gt.words[w] | latches.lt.words[w]) & valid;
                if ts_bit {
                    latches.lt.words[w] |= !tc_word & undecided;
                } else {
                    latches.gt.words[w] |= tc_word & undecided;
                }
            }
            iterations += 1;
        }
        debug_assert_eq!(shift.remaining(), 0);
        for (s, g) in self.sbit_rows[ctx].words.iter_mut().zip(&latches.gt.words) {
            *s &= !g;
        }
        Ok(CompareOutcome {
            reset_mask: latches.gt,
            iterations,
        })
    }

    /// Column-oriented dump: one line per column, `tc` in binary then s-bits.
    pub fn dump_columns(&self, limit: usize) -> String {
        let mut out = String::new();
        for col in 0..self.columns.min(limit) {
            let tc = self.read_tc(col).unwrap_or_default();
            let _ = write!(out, "col {col:>6}  tc={tc:0width$b}  s=", width = self.timestamp_bits as usize);
            for row in &self.sbit_rows {
                out.push(if row.get(col) { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    /// Row-oriented dump: timestamp rows MSB first, then s-bit rows.
    pub fn dump_rows(&self, limit: usize) -> String {
        let mut out = String::new();
        let cols = self.columns.min(limit);
        let render = |row: &BitRow| (0..cols).map(|i| if row.get(i) { '1' } else { '0' }).collect::<String>();
        for bit in (0..self.timestamp_bits).rev() {
            let _ = writeln!(out, "tc[{bit:>2}]  {}", render(&self.tc_rows[bit as usize]));
        }
        for (ctx, row) in self.sbit_rows.iter().enumerate() {
            let _ = writeln!(out, "s[{ctx:>2}]   {}", render(row));
        }
        out
    }
}
