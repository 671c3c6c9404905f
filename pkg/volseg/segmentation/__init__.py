from ._components import (LabeledComponents,
                          filter_small_components,
                          label_components, )
from ._morphology import dilate_mm, morph, parse_morphology, structuring_element
from ._pipeline import (CONFIG_KEYS, OTSU,
                        PipelineParams,
                        map_body_to_voi,
                        parse_threshold,
                        run_semi_auto, )
from ._threshold import otsu_threshold, threshold_in_voi
