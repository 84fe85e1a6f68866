"""Unit conversion: reported product quantities to m3 wood-fiber
equivalent, and WFE volumes to tonnes of carbon.

Coefficients ship in a data file, not code. The default carbon density is
0.25 tC per m3 WFE, overridable per product.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping

from .errors import NegativeQuantity, ParseError, UnknownProduct

DEFAULT_CARBON_DENSITY = 0.25  # tC per m3 WFE


@dataclass(frozen=True)
class ConversionTable:
    """Product coefficient tables, immutable after load.

    ``wfe`` maps product id to m3 WFE per reported unit; ``carbon_density``
    maps product id to tC per m3 WFE, with ``default_carbon_density``
    applying to products without an entry.
    """

    wfe: Mapping[str, float] = field(default_factory=dict)
    carbon_density: Mapping[str, float] = field(default_factory=dict)
    default_carbon_density: float = DEFAULT_CARBON_DENSITY

    def __post_init__(self):
        for pid, coeff in self.wfe.items():
            if not coeff > 0:
                raise ValueError(f"wfe coefficient for {pid!r} must be > 0")
        for pid, dens in self.carbon_density.items():
            if not dens > 0:
                raise ValueError(f"carbon density for {pid!r} must be > 0")
        if not self.default_carbon_density > 0:
            raise ValueError("default carbon density must be > 0")

    def density(self, product: str) -> float:
        return self.carbon_density.get(product, self.default_carbon_density)


def to_wfe(quantity: float, product: str, table: ConversionTable) -> float:
    """Convert a reported quantity to m3 WFE; linear in quantity."""
    if quantity < 0:
        raise NegativeQuantity(f"quantity {quantity} for {product!r}")
    try:
        coeff = table.wfe[product]
    except KeyError:
        raise UnknownProduct(f"no WFE coefficient for product {product!r}") from None
    return quantity * coeff


def to_carbon(volume: float, product: str, table: ConversionTable) -> float:
    """Convert an m3 WFE volume to tonnes of carbon; linear in volume."""
    if volume < 0:
        raise NegativeQuantity(f"volume {volume} for {product!r}")
    return volume * table.density(product)


COEFFICIENTS_HEADER = ["product_id", "wfe_coefficient", "carbon_density_tC_per_m3"]
DEFAULT_ROW_ID = "__default__"


def read_conversion_table(path) -> ConversionTable:
    """Load a coefficients CSV.

    The optional ``__default__`` row sets the default carbon density; its
    wfe_coefficient cell must be empty.
    """
    wfe: dict[str, float] = {}
    density: dict[str, float] = {}
    default_density = DEFAULT_CARBON_DENSITY
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != COEFFICIENTS_HEADER:
            raise ParseError(
                f"{path}: bad header {header!r}, expected {COEFFICIENTS_HEADER!r}"
            )
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != 3:
                raise ParseError(f"{path}: row {lineno}: expected 3 fields")
            pid, coeff_text, dens_text = (cell.strip() for cell in raw)
            if pid == DEFAULT_ROW_ID:
                if coeff_text:
                    raise ParseError(
                        f"{path}: row {lineno}: __default__ row must not set a "
                        f"wfe coefficient"
                    )
                if not dens_text:
                    raise ParseError(f"{path}: row {lineno}: __default__ row "
                                     f"needs a carbon density")
                default_density = _positive(path, lineno, "carbon density", dens_text)
                continue
            if pid in wfe:
                raise ParseError(f"{path}: row {lineno}: duplicate product {pid!r}")
            if coeff_text:
                wfe[pid] = _positive(path, lineno, "wfe coefficient", coeff_text)
            if dens_text:
                density[pid] = _positive(path, lineno, "carbon density", dens_text)
    try:
        return ConversionTable(wfe, density, default_density)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def _positive(path, lineno: int, what: str, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{path}: row {lineno}: {what} is not a number: "
                         f"{text!r}") from None
    if not value > 0:
        raise ParseError(f"{path}: row {lineno}: {what} must be > 0, got {value}")
    return value
