"""One-sided real DFT and the spectral statistics built on it.

Arrays are laid out ``(..., time, channel)``. The forward transform is
unnormalized; the inverse carries the ``1/L`` factor and doubles every
non-DC, non-Nyquist bin, matching ``numpy.fft.irfft``. Both directions are
explicit matrix products so their adjoints come for free from the tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DegenerateSpectrumError

EPS_SF = 1e-12


def num_bins(length: int) -> int:
    return length // 2 + 1


@lru_cache(maxsize=64)
def _forward_matrices(n: int):
    f = num_bins(n)
    phase = (np.arange(f)[:, None] * np.arange(n)[None, :]) % n
    angle = 2.0 * np.pi * phase / n
    cos, sin = np.cos(angle), -np.sin(angle)
    cos.flags.writeable = False
    sin.flags.writeable = False
    return cos, sin


@lru_cache(maxsize=64)
def _inverse_matrices(n: int):
    f = num_bins(n)
    weight = np.full(f, 2.0)
    weight[0] = 1.0
    if n % 2 == 0:
        weight[-1] = 1.0
    phase = (np.arange(n)[:, None] * np.arange(f)[None, :]) % n
    angle = 2.0 * np.pi * phase / n
    icos = weight * np.cos(angle) / n
    isin = -weight * np.sin(angle) / n
    icos.flags.writeable = False
    isin.flags.writeable = False
    return icos, isin


@dataclass(frozen=True)
class ComplexSpectrum:
    real: Tensor
    imag: Tensor
    length: int

    @property
    def bins(self) -> int:
        return self.real.shape[-2]

    def magnitude(self) -> Tensor:
        return ad.magnitude(self.real, self.imag)

    def power(self) -> Tensor:
        return ad.square(self.real) + ad.square(self.imag)

    def to_complex(self) -> np.ndarray:
        return self.real.value + 1j * self.imag.value


@dataclass(frozen=True)
class SpectralProfile:
    power: Tensor
    mass: Tensor
    flatness: Tensor


def real_dft(x) -> ComplexSpectrum:
    x = ad.as_tensor(x)
    if x.ndim < 2:
        raise ContractError("real_dft expects (..., L, d)")
    n = x.shape[-2]
    if n < 2:
        raise ContractError(f"real_dft needs L >= 2, got {n}")
    cos, sin = _forward_matrices(n)
    return ComplexSpectrum(ad.matmul(cos, x), ad.matmul(sin, x), n)


def inverse_real_dft(spectrum: ComplexSpectrum, length: int) -> Tensor:
    if spectrum.length != length:
        raise ContractError(f"spectrum came from length {spectrum.length}, asked for {length}")
    if spectrum.bins != num_bins(length):
        raise ContractError(f"expected {num_bins(length)} bins, got {spectrum.bins}")
    icos, isin = _inverse_matrices(length)
    return ad.matmul(icos, spectrum.real) + ad.matmul(isin, spectrum.imag)


def parseval_energy(spectrum: ComplexSpectrum) -> np.ndarray:
    """Time-domain energy per channel recovered from one-sided bins."""
    n = spectrum.length
    weight = np.full(spectrum.bins, 2.0)
    weight[0] = 1.0
    if n % 2 == 0:
        weight[-1] = 1.0
    p = spectrum.power().value
    return np.einsum("f,...fd->...d", weight, p) / n


def power_spectrum(x) -> Tensor:
    """Channel-averaged power ``S(f)``, shape ``(..., F)``."""
    return ad.mean(real_dft(x).power(), axis=-1)


def _flatness_of_power(power: Tensor, eps: float) -> Tensor:
    shifted = power + eps
    geometric = ad.exp(ad.mean(ad.log(shifted), axis=-1))
    return geometric / ad.mean(shifted, axis=-1)


def spectral_mass(x, eps: float = EPS_SF) -> SpectralProfile:
    x = ad.as_tensor(x)
    if x.shape[-2] < 2:
        raise ContractError("spectral_mass needs at least two time steps")
    power = power_spectrum(x)
    total = ad.sum(power, axis=-1, keepdims=True)
    if np.any(total.value <= 0):
        raise DegenerateSpectrumError("all-zero input has no spectral mass", op="spectral_mass")
    return SpectralProfile(power, power / total, _flatness_of_power(power, eps))


def spectral_flatness(x, eps: float = EPS_SF) -> Tensor:
    """Geometric over arithmetic mean of ``S(f) + eps``; in (0, 1]."""
    x = ad.as_tensor(x)
    if x.shape[-2] < 2:
        raise ContractError("spectral_flatness needs at least two time steps")
    power = power_spectrum(x)
    if np.any(power.value.sum(axis=-1) <= 0):
        raise DegenerateSpectrumError("all-zero input has no spectral flatness", op="spectral_flatness")
    return _flatness_of_power(power, eps)


def flatness_from_power(power, eps: float = EPS_SF) -> Tensor:
    return _flatness_of_power(ad.as_tensor(power), eps)


def kl_to_uniform(mass, tol: float = 1e-8) -> Tensor:
    """``sum_f p(f) log(K p(f))`` over the last axis."""
    mass = ad.as_tensor(mass)
    if np.any(mass.value < -tol):
        raise ContractError("mass has negative entries")
    if np.any(np.abs(mass.value.sum(axis=-1) - 1.0) > tol):
        raise ContractError("mass does not sum to one")
    k = mass.shape[-1]
    return ad.sum(ad.xlogx(mass), axis=-1) + np.log(k) * ad.sum(mass, axis=-1)
