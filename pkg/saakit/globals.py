import io
from typing import Optional

import saakit.context

last_context: Optional['saakit.context.Context'] = None

last_logs = io.StringIO('')
