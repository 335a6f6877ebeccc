import numpy as np
import pytest

from nodestage.errors import ParameterError
from nodestage.labels import PNStage, SlideLabel
from nodestage.synth import SynthProfile, _feasible_weights, generate_patient, generate_slide

SMALL = SynthProfile(width=512, height=512)


def test_clean_patient_is_pn0():
    p = generate_patient(1, SynthProfile(width=256, height=256, lesion_plan=((),) * 5))
    assert p.true_slide_labels == [SlideLabel.NEGATIVE] * 5
    assert p.true_stage is PNStage.PN0
    assert all(not tumor.bits.any() for _, tumor in p.slides)


def test_single_macro_lesion_gives_pn1():
    # 3.0 mm needs 1500 px at mpp 2.0; at mpp 0.5 it would need 6000 px.
    profile = SynthProfile(mpp=2.0, lesion_plan=((3.0,), (), (), (), ()))
    p = generate_patient(11, profile)
    assert p.true_slide_labels.count(SlideLabel.MACRO) == 1
    assert p.true_stage is PNStage.PN1
    assert p.lesion_diameters_mm[0][0] == pytest.approx(3.0, rel=0.02)


def test_lesion_too_large():
    with pytest.raises(ParameterError):
        generate_slide(SynthProfile(), np.random.default_rng(0), [3.0])


def test_explicit_macro_weights_without_room():
    with pytest.raises(ParameterError):
        generate_patient(0, SynthProfile(stage_weights=(0, 0, 0, 1, 0)))


def test_same_seed_identical():
    a = generate_patient(5, SMALL)
    b = generate_patient(5, SMALL)
    assert a.true_slide_labels == b.true_slide_labels
    for (ra, ta), (rb, tb) in zip(a.slides, b.slides):
        assert ra.pixels.tobytes() == rb.pixels.tobytes()
        assert ta == tb


def test_labels_follow_measured_lesions():
    p = generate_patient(8, SMALL)
    assert p.true_stage is not None
    for (raster, tumor), label, diam in zip(p.slides, p.true_slide_labels, p.lesion_diameters_mm):
        assert (label is SlideLabel.NEGATIVE) == (not tumor.bits.any())
        assert raster.mpp == 0.5 and raster.pixels.shape == (512, 512, 3)
        if label is SlideLabel.ITC:
            assert max(diam) <= 0.2


def test_default_profile_feasible_stages():
    # Macro lesions (> 2 mm) cannot fit on a 2048 px slide at 0.5 um/px.
    assert not SynthProfile().fits(2.2)
    assert _feasible_weights(SynthProfile()).tolist() == pytest.approx([1 / 3, 1 / 3, 1 / 3, 0, 0])
    # On 512 px even micro lesions (> 0.2 mm = 400 px) do not fit.
    stages = {generate_patient(s, SMALL).true_stage for s in range(6)}
    assert stages == {PNStage.PN0, PNStage.PN0_ITC}
