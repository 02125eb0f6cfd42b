"""
Analytic Backend
Gaussian-mixture worlds whose posterior noise E[eps | z_t, c] is available in closed form
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import torch

from .errors import InvalidRange, ShapeMismatch, SingularCovariance, UnknownConditioning
from .estimators import Conditioning, ConditioningKind, NoiseEstimator
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GaussianMixtureWorld:
    """
    Class-conditional Gaussian prior over one (h, w, c) block.

    Larger canvases are products of independent blocks, so the world is
    resolution-agnostic. means is (K, d), covariances (K, d, d), d = h*w*c.
    """
    dims: Tuple[int, int, int]
    means: torch.Tensor
    covariances: torch.Tensor
    class_priors: torch.Tensor
    class_names: Tuple[str, ...] = ()
    name: str = "world"
    _chol: torch.Tensor = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        means = torch.as_tensor(self.means, dtype=torch.float64)
        covariances = torch.as_tensor(self.covariances, dtype=torch.float64)
        priors = torch.as_tensor(self.class_priors, dtype=torch.float64)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covariances)
        object.__setattr__(self, "class_priors", priors)

        d = self.dims[0] * self.dims[1] * self.dims[2]
        K = priors.numel()
        if means.shape != (K, d) or covariances.shape != (K, d, d):
            raise ShapeMismatch(f"world with K={K}, d={d} got means {tuple(means.shape)}, covariances {tuple(covariances.shape)}")
        if torch.any(priors < 0) or abs(float(priors.sum()) - 1.0) > 1e-9:
            raise InvalidRange(f"class priors must be a probability vector, got {priors.tolist()}")
        chol, info = torch.linalg.cholesky_ex(covariances)
        if torch.any(info != 0):
            raise SingularCovariance(f"covariance of class {int(torch.nonzero(info)[0])} is not positive definite")
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def diagonal(
        cls,
        dims: Tuple[int, int, int],
        means: Sequence[Sequence[float]],
        variances: Sequence[Sequence[float]],
        priors: Optional[Sequence[float]] = None,
        class_names: Sequence[str] = (),
        name: str = "world",
    ) -> "GaussianMixtureWorld":
        means_t = torch.as_tensor(means, dtype=torch.float64)
        variances_t = torch.as_tensor(variances, dtype=torch.float64)
        K = means_t.shape[0]
        if priors is None:
            priors = [1.0 / K] * K
        return cls(
            dims=tuple(dims),
            means=means_t,
            covariances=torch.diag_embed(variances_t),
            class_priors=torch.as_tensor(priors, dtype=torch.float64),
            class_names=tuple(class_names),
            name=name,
        )

    @property
    def num_classes(self) -> int:
        return self.class_priors.numel()

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, generator: torch.Generator, label: Optional[int] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """n flattened block samples (n, d) and their class labels."""
        if label is None:
            labels = torch.multinomial(self.class_priors, n, replacement=True, generator=generator)
        else:
            labels = torch.full((n,), int(label), dtype=torch.long)
        normal = torch.randn(n, self.dim, generator=generator, dtype=torch.float64)
        samples = self.means[labels] + torch.einsum("nij,nj->ni", self._chol[labels], normal)
        return samples, labels


def to_blocks(z: torch.Tensor, dims: Tuple[int, int, int]) -> torch.Tensor:
    """(H, W, C) canvas -> (N, h*w*c) rows, one per block, row-major over blocks."""
    h, w, c = dims
    H, W, C = z.shape
    if C != c or H % h or W % w:
        raise ShapeMismatch(f"canvas {tuple(z.shape)} is not a grid of {h}x{w}x{c} blocks")
    return z.reshape(H // h, h, W // w, w, c).permute(0, 2, 1, 3, 4).reshape(-1, h * w * c)


def from_blocks(rows: torch.Tensor, dims: Tuple[int, int, int], H: int, W: int) -> torch.Tensor:
    h, w, c = dims
    return rows.reshape(H // h, W // w, h, w, c).permute(0, 2, 1, 3, 4).reshape(H, W, c)


def class_posterior_terms(world: GaussianMixtureWorld, x: torch.Tensor, alpha_bar: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Per-class posterior noise and log-evidence for rows x of z_t.

    Under class k, z_t ~ N(sqrt(a) mu_k, a Sigma_k + (1 - a) I) and
    E[z_0 | z_t, k] = mu_k + sqrt(a) Sigma_k C_k^-1 (z_t - sqrt(a) mu_k).

    Returns:
        eps (K, N, d) and log p(z_t | k) (K, N)
    """
    d = world.dim
    sqrt_a = math.sqrt(alpha_bar)
    sqrt_1ma = math.sqrt(1.0 - alpha_bar)
    eye = torch.eye(d, dtype=torch.float64)

    eps_terms = []
    log_evidence = []
    for k in range(world.num_classes):
        cov = alpha_bar * world.covariances[k] + (1.0 - alpha_bar) * eye
        chol, info = torch.linalg.cholesky_ex(cov)
        if int(info) != 0:
            raise SingularCovariance(f"marginal covariance of class {k} is singular at alpha_bar={alpha_bar}")
        residual = x - sqrt_a * world.means[k]
        solved = torch.cholesky_solve(residual.T, chol)
        z0_mean = world.means[k] + sqrt_a * (world.covariances[k] @ solved).T
        eps_terms.append((x - sqrt_a * z0_mean) / sqrt_1ma)

        mahalanobis = (residual.T * solved).sum(dim=0)
        log_det = 2.0 * torch.log(torch.diagonal(chol)).sum()
        log_evidence.append(-0.5 * (mahalanobis + log_det + d * math.log(2.0 * math.pi)))
    return torch.stack(eps_terms), torch.stack(log_evidence)


def _label_of(world: GaussianMixtureWorld, cond: Conditioning) -> Optional[int]:
    """Class index for cond, None for the null condition."""
    if cond.is_null:
        return None
    if cond.kind == ConditioningKind.CLASS_LABEL:
        label = int(cond.payload)
        if not 0 <= label < world.num_classes:
            raise UnknownConditioning(f"class {label} not in [0, {world.num_classes})")
        return label
    if cond.text is not None and cond.text.lower() in [n.lower() for n in world.class_names]:
        return [n.lower() for n in world.class_names].index(cond.text.lower())
    raise UnknownConditioning(f"{world.name} cannot interpret {cond.describe()}")


def _combine(eps_terms: torch.Tensor, log_evidence: torch.Tensor, world: GaussianMixtureWorld, label: Optional[int]) -> torch.Tensor:
    if label is not None:
        return eps_terms[label]
    weights = torch.softmax(log_evidence + torch.log(world.class_priors)[:, None], dim=0)
    return (weights[:, :, None] * eps_terms).sum(dim=0)


def analytic_epsilon(
    world: GaussianMixtureWorld,
    z_t: torch.Tensor,
    t: int,
    cond: Conditioning,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """
    Exact posterior-mean noise E[eps | z_t, c] for z_t = sqrt(a) z_0 + sqrt(1-a) eps.

    The null condition mixes classes by their posterior probability. At
    alpha_bar = 1 the noise is zero by the limiting case.

    Raises:
        UnknownConditioning: label outside the world's classes
        SingularCovariance: marginal covariance not invertible
    """
    alpha_bar = schedule.alpha_bar(t)
    label = _label_of(world, cond)
    if alpha_bar >= 1.0:
        return torch.zeros_like(z_t)
    x = to_blocks(z_t, world.dims).to(torch.float64)
    eps_terms, log_evidence = class_posterior_terms(world, x, alpha_bar)
    eps = _combine(eps_terms, log_evidence, world, label)
    return from_blocks(eps, world.dims, z_t.shape[0], z_t.shape[1]).to(z_t.dtype)


class AnalyticEstimator(NoiseEstimator):
    """Closed-form estimator over a GaussianMixtureWorld; ignores dilation."""

    resolution_agnostic = True

    def __init__(self, world: GaussianMixtureWorld, schedule: NoiseSchedule):
        super().__init__(schedule, world.dims[0], world.dims[1], world.dims[2])
        self.world = world
        self.backend_id = f"analytic:{world.name}"

    def with_schedule(self, schedule: NoiseSchedule) -> "AnalyticEstimator":
        return AnalyticEstimator(self.world, schedule)

    def _predict(self, z_t: torch.Tensor, t: int, cond: Conditioning) -> torch.Tensor:
        return analytic_epsilon(self.world, z_t, t, cond, self.schedule)

    def predict_pair(self, z_t: torch.Tensor, t: int, cond: Conditioning) -> Tuple[torch.Tensor, torch.Tensor]:
        """One posterior pass serves both outputs; values equal two separate predict calls."""
        self.check_input(z_t)
        self.check_timestep(t)
        alpha_bar = self.schedule.alpha_bar(t)
        label = _label_of(self.world, cond)
        if alpha_bar >= 1.0:
            return torch.zeros_like(z_t), torch.zeros_like(z_t)
        x = to_blocks(z_t, self.world.dims).to(torch.float64)
        eps_terms, log_evidence = class_posterior_terms(self.world, x, alpha_bar)
        H, W = z_t.shape[0], z_t.shape[1]
        eps_c = from_blocks(_combine(eps_terms, log_evidence, self.world, label), self.world.dims, H, W)
        eps_null = from_blocks(_combine(eps_terms, log_evidence, self.world, None), self.world.dims, H, W)
        return eps_c.to(z_t.dtype), eps_null.to(z_t.dtype)


def class_distance(world: GaussianMixtureWorld, z: torch.Tensor, cond: Conditioning) -> Optional[float]:
    """
    Mean Mahalanobis distance of a canvas's blocks to the class mean of `cond`,
    under that class's covariance. None for the null condition.
    """
    label = _label_of(world, cond)
    if label is None:
        return None
    residual = to_blocks(z, world.dims).to(torch.float64) - world.means[label]
    solved = torch.cholesky_solve(residual.T, world._chol[label])
    return float((residual.T * solved).sum(dim=0).sqrt().mean())
