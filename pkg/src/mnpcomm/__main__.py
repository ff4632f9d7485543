from mnpcomm.cli import main

raise SystemExit(main())
