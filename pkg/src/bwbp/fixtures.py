"""Canonical test models shipped with the package."""

from __future__ import annotations

from .model import ModelSpec, ProductKernel, TableKernel


def m_bin2() -> ModelSpec:
    ker = TableKernel.build(2, [((2, 0), 0.25), ((1, 1), 0.5), ((0, 2), 0.25)])
    return ModelSpec.create([(2, 1.0)], {2: ker}, "M_BIN2")


def m_asym() -> ModelSpec:
    ker = TableKernel.build(2, [((2, 0), 0.5), ((0, 1), 0.5)])
    return ModelSpec.create([(2, 1.0)], {2: ker}, "M_ASYM")


def m_weak() -> ModelSpec:
    bern = [(0, 0.9), (1, 0.1)]
    ker = ProductKernel.build(5, [[(4, 1.0)], bern, bern, bern, bern])
    return ModelSpec.create([(5, 1.0)], {5: ker}, "M_WEAK")


def m_sub() -> ModelSpec:
    ker = TableKernel.build(1, [((2,), 1.0)])
    return ModelSpec.create([(0, 0.5), (1, 0.5)], {1: ker}, "M_SUB")


def m_nondeg() -> ModelSpec:
    """Both daughters always infected; L is nondegenerate."""
    ker = TableKernel.build(2, [((2, 1), 0.5), ((1, 2), 0.5)])
    return ModelSpec.create([(2, 1.0)], {2: ker}, "M_NONDEG")


def m_meanzero() -> ModelSpec:
    """Parasites pile into the first daughter while most cells die, so the
    normalized parasite count tends to 0 even though parasites survive."""
    ker = TableKernel.build(8, [((6,) + (0,) * 7, 0.98), ((6,) + (1,) * 7, 0.02)])
    return ModelSpec.create([(0, 0.65), (8, 0.35)], {8: ker}, "M_MEANZERO")


FIXTURES = {
    "M_BIN2": m_bin2,
    "M_ASYM": m_asym,
    "M_WEAK": m_weak,
    "M_SUB": m_sub,
    "M_NONDEG": m_nondeg,
    "M_MEANZERO": m_meanzero,
}
