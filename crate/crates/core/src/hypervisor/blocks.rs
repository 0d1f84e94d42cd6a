//! Basic-block labeling table for the reference handlers.
//!
//! Each variant of [`Block`] is one instrumented basic block. The table order
//! is the bitmap bit order and is part of the trace format: appending blocks
//! changes the bitmap width, so it must go together with a format version bump.

macro_rules! block_table {
    ($($handler:literal => [$($block:ident),* $(,)?];)*) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u16)]
        pub enum Block {
            $($($block,)*)*
        }

        pub const BLOCK_TABLE: &[(Block, &str, &str)] = &[
            $($((Block::$block, $handler, stringify!($block)),)*)*
        ];
    };
}

block_table! {
    "dispatch" => [
        DispatchEntry,
        DispatchWakeVcpu,
        DispatchEntryFailure,
        DispatchUnhandled,
        ResumeInjectEvent,
        ResumeEnter,
        ResumeEntryFailed,
        CrashPath,
    ];
    "advance_rip" => [
        AdvanceRip,
        AdvanceSingleStep,
        AdvanceClearShadow,
    ];
    "external_interrupt" => [
        ExtIntEntry,
        ExtIntSpurious,
        ExtIntBadVector,
        ExtIntTimer,
        ExtIntIpi,
        ExtIntDevice,
        ExtIntInject,
        ExtIntDefer,
        ExtIntIdleHint,
        ExtIntBusy,
    ];
    "triple_fault" => [
        TripleFaultEntry,
        TripleFaultDump,
    ];
    "interrupt_window" => [
        IntWinEntry,
        IntWinSuppressed,
        IntWinDeliver,
        IntWinSpurious,
        IntWinShadowed,
        IntWinHint,
        IntWinNoHint,
    ];
    "cpuid" => [
        CpuidEntry,
        CpuidUpperIgnored,
        CpuidVendor,
        CpuidFeatures,
        CpuidOsxsave,
        CpuidSubleafLeaf,
        CpuidSubleafZero,
        CpuidSubleafIndexed,
        CpuidSubleafInvalid,
        CpuidBasicOther,
        CpuidHypervisorLeaf,
        CpuidHypSignature,
        CpuidHypFeatures,
        CpuidHypUnknown,
        CpuidExtended,
        CpuidOutOfRange,
    ];
    "hlt" => [
        HltEntry,
        HltInterruptsOff,
        HltEventPending,
        HltBlock,
        HltPollHint,
        HltNoPoll,
        HltStiIdiom,
    ];
    "rdtsc" => [
        RdtscEntry,
        RdtscTsdSet,
        RdtscTsdFault,
        RdtscNoOffset,
        RdtscApplyOffset,
        RdtscPlain,
        RdtscpAux,
        RdtscBadLength,
        RdtscZeroExtendRax,
        RdtscZeroExtendRdx,
    ];
    "vmcall" => [
        VmcallEntry,
        VmcallFromUser,
        VmcallUpperIgnored,
        VmcallVersion,
        VmcallVersionNumber,
        VmcallVersionOther,
        VmcallSchedOp,
        VmcallSchedYield,
        VmcallSchedBlock,
        VmcallSchedOther,
        VmcallHvmOp,
        VmcallHvmOpDispatch,
        VmcallHvmOpInvalid,
        VmcallConsoleIo,
        VmcallConsoleTruncate,
        VmcallEventChannel,
        VmcallEnosys,
    ];
    "cr_access" => [
        CrEntry,
        CrBadRegister,
        CrRspOperand,
        CrCr0Write,
        CrCr0Reserved,
        CrCr0PgNoPe,
        CrCr0NwNoCd,
        CrCr0MaskHit,
        CrCr0PassThrough,
        CrModeChange,
        CrEnterProtected,
        CrLeaveProtected,
        CrPagingOn,
        CrPagingCr3Unaligned,
        CrPagingOff,
        CrSegmentSync,
        CrMovToCr3,
        CrCr3Reserved,
        CrCr3Flush,
        CrMovToCr4,
        CrCr4Reserved,
        CrCr4PgeFlush,
        CrCr8Access,
        CrCr8Unexpected,
        CrCr8Invalid,
        CrMovFromCr0,
        CrMovFromCr3,
        CrMovFromCr4,
        CrClts,
        CrLmsw,
    ];
    "io_instruction" => [
        IoEntry,
        IoPortMismatch,
        IoBadSize,
        IoString,
        IoRep,
        IoRepZero,
        IoUnaligned,
        IoPicInit,
        IoPicOcw,
        IoPicMaskAll,
        IoPicMaskPartial,
        IoPicRead,
        IoPit,
        IoRtc,
        IoSerial,
        IoSerialTx,
        IoPciAddress,
        IoPciData,
        IoPciDisabled,
        IoFwGdt,
        IoUnclaimed,
        IoInMerge,
        IoOutTruncate,
    ];
    "rdmsr" => [
        RdmsrEntry,
        RdmsrUpperIgnored,
        RdmsrTsc,
        RdmsrApicBase,
        RdmsrSysenter,
        RdmsrPat,
        RdmsrMiscEnable,
        RdmsrEfer,
        RdmsrX2apic,
        RdmsrUnknown,
    ];
    "wrmsr" => [
        WrmsrEntry,
        WrmsrUpperIgnored,
        WrmsrTscAdjust,
        WrmsrApicBase,
        WrmsrApicDisable,
        WrmsrSysenter,
        WrmsrPat,
        WrmsrPatInvalid,
        WrmsrMiscEnable,
        WrmsrEfer,
        WrmsrEferLongMode,
        WrmsrX2apic,
        WrmsrHypercallPage,
        WrmsrUnknown,
    ];
    "ept_violation" => [
        EptEntry,
        EptLinearValid,
        EptRamPopulate,
        EptRamExec,
        EptBulkHint,
        EptSingleHint,
        EptLegacyRegion,
        EptRomWrite,
        EptIoapic,
        EptLapic,
        EptLapicEoi,
        EptLapicIcr,
        EptLapicBroadcast,
        EptLapicOther,
        EptMmioWrite,
        EptMmioRead,
        EptMmioWide,
        EptUnmapped,
        EptUnmappedExec,
    ];
    "preemption_timer" => [
        TimerEntry,
        TimerRearm,
    ];
    "async" => [
        AsyncVlapic,
        AsyncIrq,
        AsyncVpt,
    ];
}

/// Number of instrumented blocks; also the coverage bitmap width in bits.
pub const BLOCK_COUNT: usize = BLOCK_TABLE.len();

/// Blocks that only asynchronous host activity would hit. No handler sets
/// them; the replayer's noise injector draws from this pool.
pub const ASYNC_POOL: [Block; 3] = [Block::AsyncVlapic, Block::AsyncIrq, Block::AsyncVpt];

impl Block {
    #[inline]
    pub fn id(self) -> u16 {
        self as u16
    }

    pub fn from_id(id: u16) -> Option<Block> {
        BLOCK_TABLE.get(usize::from(id)).map(|(b, _, _)| *b)
    }

    pub fn handler(self) -> &'static str {
        BLOCK_TABLE[self.id() as usize].1
    }

    pub fn label(self) -> &'static str {
        BLOCK_TABLE[self.id() as usize].2
    }

    /// Position of the block within its handler.
    pub fn ordinal(self) -> usize {
        let handler = self.handler();
        BLOCK_TABLE[..self.id() as usize]
            .iter()
            .filter(|(_, h, _)| *h == handler)
            .count()
    }
}

/// `block_id,handler,ordinal,label` rows.
pub fn block_table_csv() -> String {
    let mut out = String::from("block_id,handler,ordinal,label\n");
    for (block, handler, label) in BLOCK_TABLE {
        out.push_str(&format!("{},{},{},{}\n", block.id(), handler, block.ordinal(), label));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_match_table_positions() {
        for (i, (b, _, _)) in BLOCK_TABLE.iter().enumerate() {
            assert_eq!(b.id() as usize, i);
            assert_eq!(Block::from_id(i as u16), Some(*b));
        }
        assert_eq!(Block::from_id(BLOCK_COUNT as u16), None);
    }

    #[test]
    fn handler_sizes_within_catalog_bounds() {
        let mut sizes = std::collections::BTreeMap::<&str, usize>::new();
        for (_, h, _) in BLOCK_TABLE {
            *sizes.entry(h).or_default() += 1;
        }
        for (h, n) in sizes {
            if matches!(h, "dispatch" | "advance_rip" | "async" | "triple_fault" | "preemption_timer") {
                continue;
            }
            assert!((5..=30).contains(&n), "{h} has {n} blocks");
        }
    }

    #[test]
    fn ordinals_restart_per_handler() {
        assert_eq!(Block::DispatchEntry.ordinal(), 0);
        assert_eq!(Block::CrEntry.ordinal(), 0);
        assert_eq!(Block::CrBadRegister.ordinal(), 1);
    }
}
