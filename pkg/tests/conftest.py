"""Shared family builders for the test suite."""

import pytest

from caplim import Marginal, MeasureFamily, ProductMeasure


def make_sigma_family(resolution: int = 9) -> MeasureFamily:
    """Two zero-mean normals with reciprocal variances sigma**2 and sigma**-2."""

    def build(sigma: float) -> ProductMeasure:
        return ProductMeasure(
            (Marginal.normal(0.0, sigma**2), Marginal.normal(0.0, sigma**-2)),
            stationary=False,
        )

    return MeasureFamily(
        parameter_domain=((0.5, 2.0),),
        builder=build,
        grid_resolution=resolution,
        K=1.0,
        name="reciprocal-variance-pair",
    )


def make_location_family(lo: float, hi: float, var: float = 1.0,
                         resolution: int = 9) -> MeasureFamily:
    def build(mu: float) -> ProductMeasure:
        return ProductMeasure((Marginal.normal(mu, var),), stationary=True)

    return MeasureFamily(
        parameter_domain=((lo, hi),),
        builder=build,
        grid_resolution=resolution,
        K=1.0,
        name=f"normal-location-{lo:g}-{hi:g}",
    )


def make_bernoulli_family(lo: float, hi: float, resolution: int = 5) -> MeasureFamily:
    def build(p: float) -> ProductMeasure:
        return ProductMeasure((Marginal.bernoulli(p),), stationary=True)

    return MeasureFamily(
        parameter_domain=((lo, hi),),
        builder=build,
        grid_resolution=resolution,
        K=1.0,
        name=f"bernoulli-{lo:g}-{hi:g}",
    )


def make_singleton(marginals, name: str = "singleton") -> MeasureFamily:
    return MeasureFamily.singleton(
        ProductMeasure(tuple(marginals), stationary=len(marginals) == 1), name=name
    )


@pytest.fixture(scope="session")
def sigma_family() -> MeasureFamily:
    return make_sigma_family()


@pytest.fixture(scope="session")
def standard_normal_family() -> MeasureFamily:
    return make_singleton([Marginal.normal(0.0, 1.0)], name="standard-normal")
